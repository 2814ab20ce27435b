#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ccpool {

enum class LabKind { Reference, Local };

/// One study participant. `local_w` is the local-laboratory biomarker value,
/// `ref_x` the reference-laboratory value for the same specimen.
struct Subject {
    std::string subject_id;
    bool is_case = false;
    std::optional<double> local_w;
    std::optional<double> ref_x;
    std::optional<double> effect_modifier;
    std::vector<double> covariates;
    bool in_calibration_subset = false;
};

/// A matched set: one case and its matched controls.
struct Stratum {
    std::string stratum_id;
    std::vector<Subject> members;

    const Subject *find_case() const;
    std::size_t n_controls() const;
};

struct Study {
    std::string study_id;
    LabKind lab_kind = LabKind::Local;
    std::vector<Stratum> strata;
    // Re-assayed controls from the parent cohort that were not matched into
    // any stratum. They feed the calibration fit only.
    std::vector<Subject> calibration_only;
};

struct DesignSpec {
    bool include_interaction = false;
    std::vector<std::string> covariate_names;
    // Exposure units per reported unit, e.g. 20 for "per 20 nmol/L".
    double exposure_scale = 1.0;

    // Columns of a difference row: exposure, [modifier, interaction], covariates.
    Eigen::Index n_columns(std::size_t n_covariates) const;
    std::vector<std::string> column_names(std::size_t n_covariates) const;
};

struct PooledDataset {
    std::vector<Study> studies;
    DesignSpec design;

    std::size_t covariate_dimension() const;
    std::size_t n_strata() const;
    const Study *find_study(const std::string &study_id) const;
};

enum class Severity { Warning, Error };

struct Violation {
    std::string study_id;
    std::string stratum_id;
    std::string subject_id;
    std::string rule;
    Severity severity = Severity::Error;
};

using ValidationReport = std::vector<Violation>;

namespace rules {
inline constexpr const char *multiple_cases = "multiple cases in stratum";
inline constexpr const char *no_case = "no case in stratum";
inline constexpr const char *no_controls = "no controls in stratum";
inline constexpr const char *case_in_calibration = "case in calibration subset";
inline constexpr const char *calibration_incomplete = "calibration subject missing a measurement";
inline constexpr const char *no_measurement = "subject has neither local_w nor ref_x";
inline constexpr const char *covariate_dimension = "covariate dimension mismatch";
inline constexpr const char *reference_missing_x = "reference-lab subject missing ref_x";
inline constexpr const char *reference_has_calibration = "reference-lab study has a calibration subset";
inline constexpr const char *local_missing_w = "local-lab subject missing local_w";
inline constexpr const char *local_no_calibration = "local-lab study has empty calibration subset";
inline constexpr const char *duplicate_study = "duplicate study_id";
inline constexpr const char *modifier_missing = "effect modifier missing under interaction design";
inline constexpr const char *modifier_inconsistent = "effect modifier present on some subjects only";
inline constexpr const char *covariate_names = "covariate_names length differs from covariate dimension";
} // namespace rules

/// Checks every structural invariant of the pooled dataset. Violations are
/// returned as data; the dataset is estimation-ready when `is_ready` holds.
ValidationReport validate(const PooledDataset &dataset);

/// True when the report contains no Error-severity entries.
bool is_ready(const ValidationReport &report);

std::string describe(const Violation &violation);

/// Per-subject exposure value; nullopt means the value is undefined.
using ExposureAccessor = std::function<std::optional<double>(const Subject &)>;

/// Difference rows (control minus case), one per control, with the columns
/// laid out by `design`. The interaction column is differenced after the
/// product is formed.
Eigen::MatrixXd stratum_differences(const Stratum &stratum, const ExposureAccessor &exposure,
                                    const DesignSpec &design);

// Common accessors.
std::optional<double> local_exposure(const Subject &subject);
std::optional<double> reference_exposure(const Subject &subject);

} // namespace ccpool
