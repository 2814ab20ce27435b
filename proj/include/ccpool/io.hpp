#pragma once

#include "ccpool/datamodel.hpp"
#include "ccpool/simharness.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace ccpool {

// ---------------------------------------------------------------- ingestion

/// CSV schema (header required, empty field = missing):
///   study_id, stratum_id, subject_id, is_case, local_w, ref_x,
///   in_calibration_subset, [effect_modifier], [lab_kind], covariates...
/// subject_id and lab_kind are optional. Without lab_kind a study is Local
/// when any row carries local_w. An empty stratum_id marks a re-assayed
/// calibration subject that was not matched into any stratum.
struct IngestResult {
    PooledDataset dataset;
    std::vector<std::string> warnings;
};

IngestResult parse_csv(std::istream &in, const std::string &source = "<input>");
IngestResult ingest_csv(const std::filesystem::path &path);

/// Writes a dataset in the ingestion schema (values at full precision).
void write_dataset_csv(std::ostream &out, const PooledDataset &dataset);

// ---------------------------------------------------------------- formatting

/// Six significant digits, used by every report.
std::string format_number(double value);
/// Shortest text that parses back to the identical double.
std::string format_exact(double value);
double parse_number(const std::string &text);

enum class OutputFormat { Csv, Table };

/// Run manifest: command, seed, a stable hash of the configuration and the
/// software version. Contains no timestamps, so reruns are byte-identical.
struct Manifest {
    std::string command;
    std::uint64_t seed = 0;
    bool has_seed = false;
    std::vector<std::pair<std::string, std::string>> config; // canonical key order
};

std::uint64_t config_hash(const Manifest &manifest); // FNV-1a 64 over the canonical config
std::string render_manifest(const Manifest &manifest, const std::vector<std::string> &outputs);

/// Writes every (file name, contents) pair into out_dir. Nothing is written
/// if the list is empty; unwritable paths raise Io errors.
std::vector<std::filesystem::path>
write_outputs(const std::filesystem::path &out_dir,
              const std::vector<std::pair<std::string, std::string>> &files);

// ---------------------------------------------------------------- analysis reports

struct AnalysisRow {
    std::string method; // display label
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
};

struct AnalysisReport {
    DesignSpec design;
    std::vector<AnalysisRow> rows;
    std::vector<std::string> warnings;
};

/// Exposure-type coefficients ("exposure", "interaction") are multiplied by
/// design.exposure_scale before exponentiation.
std::string render_analysis_csv(const AnalysisReport &report);
std::string render_analysis_table(const AnalysisReport &report);

// ---------------------------------------------------------------- simulation reports

struct SimulationRow {
    std::string label; // e.g. "log(1.50)"
    SimulationResult result;
};

std::string render_metrics_csv(const std::vector<SimulationRow> &rows);
std::string render_metrics_table(const std::vector<SimulationRow> &rows);
/// One line per replicate, method and coefficient, at full precision.
std::string render_records_csv(const std::vector<SimulationRow> &rows);
/// Parses render_records_csv output and recomputes the metrics.
std::vector<SimulationRow> read_records_csv(std::istream &in, const std::string &source = "<records>");

std::string render_fig1_csv(const std::vector<Fig1Point> &points);
std::string render_fig1_table(const std::vector<Fig1Point> &points);
std::string render_fig2_csv(const std::vector<Fig2Point> &points);
std::string render_fig2_table(const std::vector<Fig2Point> &points);

} // namespace ccpool
