#include "ccpool/io.hpp"
#include "ccpool/error.hpp"

#include <boost/tokenizer.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

namespace ccpool {

namespace {

constexpr const char *kVersion = "0.1.0";

using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;

std::vector<std::string> split_csv(const std::string &line, std::size_t line_no,
                                   const std::string &source) {
    std::vector<std::string> fields;
    try {
        Tokenizer tok(line, boost::escaped_list_separator<char>('\\', ',', '"'));
        for (const auto &f : tok)
            fields.push_back(f);
    } catch (const boost::escaped_list_error &e) {
        throw Error(ErrorCode::MalformedInput,
                    fmt::format("{}:{}: malformed CSV: {}", source, line_no, e.what()));
    }
    return fields;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

bool parse_flag(const std::string &text, bool &out) {
    if (text == "1" || text == "true" || text == "TRUE") {
        out = true;
        return true;
    }
    if (text == "0" || text == "false" || text == "FALSE") {
        out = false;
        return true;
    }
    return false;
}

bool parse_double(const std::string &text, double &out) {
    const char *begin = text.data();
    const char *end = begin + text.size();
    if (begin != end && *begin == '+')
        ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

struct SubjectKey {
    std::string study, stratum, subject;
    auto operator<=>(const SubjectKey &) const = default;
};

} // namespace

double parse_number(const std::string &text) {
    double v = 0.0;
    const std::string t = trim(text);
    const char *begin = t.data();
    const char *end = begin + t.size();
    if (begin != end && *begin == '+')
        ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw Error(ErrorCode::MalformedInput, fmt::format("'{}' is not a number", text));
    return v;
}

std::string format_number(double value) {
    if (std::isnan(value))
        return "NA";
    return fmt::format("{:#.6g}", value);
}

std::string format_exact(double value) {
    if (std::isnan(value))
        return "NA";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

IngestResult parse_csv(std::istream &in, const std::string &source) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line))
        throw Error(ErrorCode::MalformedInput, fmt::format("{}: empty file, header required", source));
    ++line_no;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        line.erase(0, 3);
    std::vector<std::string> header = split_csv(line, line_no, source);
    for (auto &h : header)
        h = trim(h);

    std::map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < header.size(); ++k) {
        if (header[k].empty())
            throw Error(ErrorCode::MalformedInput,
                        fmt::format("{}:1: empty column name in header", source));
        if (!col.emplace(header[k], k).second)
            throw Error(ErrorCode::MalformedInput,
                        fmt::format("{}:1: duplicate column '{}'", source, header[k]));
    }
    for (const char *required : {"study_id", "stratum_id", "is_case", "local_w", "ref_x",
                                 "in_calibration_subset"})
        if (!col.count(required))
            throw Error(ErrorCode::MalformedInput,
                        fmt::format("{}:1: missing required column '{}'", source, required));
    const std::set<std::string> known{"study_id", "stratum_id", "subject_id", "is_case",
                                      "local_w", "ref_x", "in_calibration_subset",
                                      "effect_modifier", "lab_kind"};
    std::vector<std::size_t> covariate_cols;
    IngestResult result;
    for (std::size_t k = 0; k < header.size(); ++k)
        if (!known.count(header[k])) {
            covariate_cols.push_back(k);
            result.dataset.design.covariate_names.push_back(header[k]);
        }
    const bool has_subject = col.count("subject_id") > 0;
    const bool has_modifier = col.count("effect_modifier") > 0;
    const bool has_lab = col.count("lab_kind") > 0;

    struct StudyBuild {
        Study study;
        std::map<std::string, std::size_t> stratum_index;
        std::optional<LabKind> declared;
        bool any_local_w = false;
    };
    std::vector<StudyBuild> builds;
    std::map<std::string, std::size_t> study_index;
    std::map<SubjectKey, std::size_t> seen;

    auto fail = [&](const std::string &msg) -> Error {
        return Error(ErrorCode::MalformedInput, fmt::format("{}:{}: {}", source, line_no, msg));
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        const auto fields = split_csv(line, line_no, source);
        if (fields.size() != header.size())
            throw fail(fmt::format("expected {} fields, found {}", header.size(), fields.size()));
        auto field = [&](const char *name) { return trim(fields[col.at(name)]); };
        auto optional_number = [&](const char *name) -> std::optional<double> {
            const std::string text = field(name);
            if (text.empty())
                return std::nullopt;
            double v = 0.0;
            if (!parse_double(text, v))
                throw fail(fmt::format("column '{}': '{}' is not a finite number", name, text));
            return v;
        };
        auto flag = [&](const char *name) {
            bool v = false;
            if (!parse_flag(field(name), v))
                throw fail(fmt::format("column '{}': expected 0 or 1, found '{}'", name, field(name)));
            return v;
        };

        const std::string study_id = field("study_id");
        if (study_id.empty())
            throw fail("empty study_id");
        const std::string stratum_id = field("stratum_id");
        Subject m;
        m.subject_id = has_subject ? field("subject_id") : fmt::format("row{}", line_no);
        if (m.subject_id.empty())
            throw fail("empty subject_id");
        m.is_case = flag("is_case");
        m.local_w = optional_number("local_w");
        m.ref_x = optional_number("ref_x");
        m.in_calibration_subset = flag("in_calibration_subset");
        if (has_modifier)
            m.effect_modifier = optional_number("effect_modifier");
        for (std::size_t k : covariate_cols) {
            double v = 0.0;
            const std::string text = trim(fields[k]);
            if (!parse_double(text, v))
                throw fail(fmt::format("covariate '{}': '{}' is not a finite number", header[k], text));
            m.covariates.push_back(v);
        }

        const SubjectKey key{study_id, stratum_id, m.subject_id};
        if (const auto it = seen.find(key); it != seen.end())
            throw Error(ErrorCode::DuplicateKey,
                        fmt::format("{}:{}: duplicate key (study '{}', stratum '{}', subject '{}'), "
                                    "first seen on line {}",
                                    source, line_no, study_id, stratum_id, m.subject_id, it->second));
        seen.emplace(key, line_no);

        auto [sit, inserted] = study_index.emplace(study_id, builds.size());
        if (inserted) {
            builds.emplace_back();
            builds.back().study.study_id = study_id;
        }
        StudyBuild &b = builds[sit->second];
        if (has_lab) {
            const std::string lab = field("lab_kind");
            std::optional<LabKind> kind;
            if (lab == "reference" || lab == "Reference")
                kind = LabKind::Reference;
            else if (lab == "local" || lab == "Local")
                kind = LabKind::Local;
            else if (!lab.empty())
                throw fail(fmt::format("lab_kind must be 'reference' or 'local', found '{}'", lab));
            if (kind) {
                if (b.declared && *b.declared != *kind)
                    throw fail(fmt::format("conflicting lab_kind for study '{}'", study_id));
                b.declared = kind;
            }
        }
        b.any_local_w = b.any_local_w || m.local_w.has_value();

        if (stratum_id.empty()) {
            b.study.calibration_only.push_back(std::move(m));
            continue;
        }
        auto [stit, new_stratum] = b.stratum_index.emplace(stratum_id, b.study.strata.size());
        if (new_stratum) {
            b.study.strata.emplace_back();
            b.study.strata.back().stratum_id = stratum_id;
        }
        b.study.strata[stit->second].members.push_back(std::move(m));
    }

    for (auto &b : builds) {
        b.study.lab_kind = b.declared.value_or(b.any_local_w ? LabKind::Local : LabKind::Reference);
        result.dataset.studies.push_back(std::move(b.study));
    }
    if (result.dataset.studies.empty())
        throw Error(ErrorCode::MalformedInput, fmt::format("{}: no data rows", source));
    const ValidationReport report = validate(result.dataset);
    std::string errors;
    std::size_t n_errors = 0;
    for (const auto &v : report) {
        const auto it = seen.find({v.study_id, v.stratum_id, v.subject_id});
        const std::string where =
            it != seen.end() ? fmt::format("{}:{}", source, it->second) : source;
        if (v.severity == Severity::Warning) {
            result.warnings.push_back(fmt::format("{}: {}", where, describe(v)));
        } else {
            if (++n_errors <= 20)
                errors += fmt::format("\n  {}: {}", where, describe(v));
        }
    }
    if (n_errors > 0) {
        if (n_errors > 20)
            errors += fmt::format("\n  ... and {} more", n_errors - 20);
        throw Error(ErrorCode::InvalidDataset,
                    fmt::format("{}: {} validation error(s):{}", source, n_errors, errors));
    }
    return result;
}

IngestResult ingest_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
    return parse_csv(in, path.string());
}

void write_dataset_csv(std::ostream &out, const PooledDataset &dataset) {
    const bool modifier = [&] {
        for (const auto &s : dataset.studies)
            for (const auto &st : s.strata)
                for (const auto &m : st.members)
                    if (m.effect_modifier)
                        return true;
        return false;
    }();
    const std::size_t n_cov = dataset.covariate_dimension();
    out << "study_id,stratum_id,subject_id,is_case,local_w,ref_x,in_calibration_subset";
    if (modifier)
        out << ",effect_modifier";
    out << ",lab_kind";
    const auto names = DesignSpec{false, dataset.design.covariate_names, 1.0}.column_names(n_cov);
    for (std::size_t k = 1; k < names.size(); ++k)
        out << ',' << names[k];
    out << '\n';
    auto opt = [](const std::optional<double> &v) { return v ? format_exact(*v) : std::string(); };
    auto row = [&](const Study &s, const std::string &stratum, const Subject &m) {
        out << s.study_id << ',' << stratum << ',' << m.subject_id << ',' << (m.is_case ? 1 : 0)
            << ',' << opt(m.local_w) << ',' << opt(m.ref_x) << ','
            << (m.in_calibration_subset ? 1 : 0);
        if (modifier)
            out << ',' << opt(m.effect_modifier);
        out << ',' << (s.lab_kind == LabKind::Local ? "local" : "reference");
        for (double z : m.covariates)
            out << ',' << format_exact(z);
        out << '\n';
    };
    for (const auto &s : dataset.studies) {
        for (const auto &st : s.strata)
            for (const auto &m : st.members)
                row(s, st.stratum_id, m);
        for (const auto &m : s.calibration_only)
            row(s, "", m);
    }
}

// ---------------------------------------------------------------- manifest and files

std::uint64_t config_hash(const Manifest &manifest) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&](const std::string &s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    mix(manifest.command);
    mix(manifest.has_seed ? std::to_string(manifest.seed) : std::string("-"));
    for (const auto &[k, v] : manifest.config) {
        mix(k);
        mix(v);
    }
    return h;
}

std::string render_manifest(const Manifest &manifest, const std::vector<std::string> &outputs) {
    nlohmann::ordered_json j;
    j["software"] = "ccpool";
    j["version"] = kVersion;
    j["command"] = manifest.command;
    if (manifest.has_seed)
        j["seed"] = manifest.seed;
    else
        j["seed"] = nullptr;
    j["config_hash"] = fmt::format("fnv1a64:{:016x}", config_hash(manifest));
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto &[k, v] : manifest.config)
        cfg[k] = v;
    j["config"] = cfg;
    j["outputs"] = outputs;
    return j.dump(2) + "\n";
}

std::vector<std::filesystem::path>
write_outputs(const std::filesystem::path &out_dir,
              const std::vector<std::pair<std::string, std::string>> &files) {
    if (files.empty())
        throw Error(ErrorCode::Precondition, "nothing to write");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw Error(ErrorCode::Io,
                    fmt::format("cannot create output directory '{}'", out_dir.string()));
    std::vector<std::filesystem::path> written;
    for (const auto &[name, contents] : files) {
        const auto path = out_dir / name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << contents;
        out.close();
        if (!out) {
            for (const auto &p : written)
                std::filesystem::remove(p, ec);
            std::filesystem::remove(path, ec);
            throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", path.string()));
        }
        written.push_back(path);
    }
    return written;
}

// ---------------------------------------------------------------- analysis reports

namespace {

bool exposure_type(const std::string &name) { return name == "exposure" || name == "interaction"; }

void require_rows(const AnalysisReport &report) {
    if (report.rows.empty())
        throw Error(ErrorCode::Precondition, "no results to report");
}

} // namespace

std::string render_analysis_csv(const AnalysisReport &report) {
    require_rows(report);
    std::string out = "method,coefficient,scale,beta,se,ci_low,ci_high,rr,rr_ci_low,rr_ci_high\n";
    for (const auto &row : report.rows)
        for (std::size_t k = 0; k < row.names.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            const double scale = exposure_type(row.names[k]) ? report.design.exposure_scale : 1.0;
            const double b = row.coef(i) * scale, se = row.se(i) * scale;
            out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", row.method, row.names[k],
                               format_number(scale), format_number(b), format_number(se),
                               format_number(b - 1.96 * se), format_number(b + 1.96 * se),
                               format_number(std::exp(b)), format_number(std::exp(b - 1.96 * se)),
                               format_number(std::exp(b + 1.96 * se)));
        }
    return out;
}

std::string render_analysis_table(const AnalysisReport &report) {
    require_rows(report);
    const auto &names = report.rows.front().names;
    const auto scale_of = [&](const std::string &name) {
        return exposure_type(name) ? report.design.exposure_scale : 1.0;
    };
    std::string out;
    if (report.design.exposure_scale != 1.0)
        out += fmt::format("Exposure coefficients per {:g} units.\n\n", report.design.exposure_scale);

    std::vector<std::size_t> primary, adjustment;
    for (std::size_t k = 0; k < names.size(); ++k)
        (names[k] == "exposure" || names[k] == "modifier" || names[k] == "interaction" ? primary
                                                                                       : adjustment)
            .push_back(k);

    const auto block = [&](const std::vector<std::size_t> &cols) {
        out += fmt::format("{:<18}", "Method");
        for (std::size_t k : cols)
            out += fmt::format("{:>36}", names[k] + ": beta (95% CI)");
        out += '\n';
        for (const auto &row : report.rows) {
            out += fmt::format("{:<18}", row.method);
            for (std::size_t k : cols) {
                const auto i = static_cast<Eigen::Index>(k);
                const double b = row.coef(i) * scale_of(names[k]), se = row.se(i) * scale_of(names[k]);
                out += fmt::format("{:>36}", fmt::format("{} ({}, {})", format_number(b),
                                                         format_number(b - 1.96 * se),
                                                         format_number(b + 1.96 * se)));
            }
            out += '\n';
        }
    };

    if (primary.size() == 1) {
        const auto i = static_cast<Eigen::Index>(primary.front());
        const double s = report.design.exposure_scale;
        out += fmt::format("{:<18}{:>12}{:>12}   {}\n", "Method", "beta_x", "RR", "RR 95% CI");
        for (const auto &row : report.rows) {
            const double b = row.coef(i) * s, se = row.se(i) * s;
            out += fmt::format("{:<18}{:>12}{:>12}   ({}, {})\n", row.method, format_number(b),
                               format_number(std::exp(b)), format_number(std::exp(b - 1.96 * se)),
                               format_number(std::exp(b + 1.96 * se)));
        }
    } else {
        block(primary);
    }
    if (!adjustment.empty()) {
        out += "\nAdjustment covariates\n";
        block(adjustment);
    }
    for (const auto &w : report.warnings)
        out += "warning: " + w + "\n";
    return out;
}

// ---------------------------------------------------------------- simulation reports

namespace {

const char *short_label(SimMethod m) {
    switch (m) {
    case SimMethod::Naive:
        return "N";
    case SimMethod::Internalized:
        return "IN";
    case SimMethod::FullCalibration:
        return "FC";
    case SimMethod::TwoStage:
        return "TS";
    }
    return "?";
}

SimMethod method_from(const std::string &s) {
    for (SimMethod m : all_sim_methods())
        if (s == to_string(m))
            return m;
    throw Error(ErrorCode::MalformedInput, fmt::format("unknown method '{}'", s));
}

void require_sim(const std::vector<SimulationRow> &rows) {
    if (rows.empty())
        throw Error(ErrorCode::Precondition, "no results to report");
}

} // namespace

std::string render_metrics_csv(const std::vector<SimulationRow> &rows) {
    require_sim(rows);
    std::string out = "setting,method,coefficient,truth,mean_percent_bias,empirical_se,"
                      "mean_model_se,mse,coverage,n_replicates,n_failed\n";
    for (const auto &row : rows)
        for (const auto &mm : row.result.metrics.methods)
            for (const auto &c : mm.coefficients)
                out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", row.label,
                                   to_string(mm.method), c.name, format_number(c.truth),
                                   format_number(c.mean_percent_bias), format_number(c.empirical_se),
                                   format_number(c.mean_model_se), format_number(c.mse),
                                   format_number(c.coverage), mm.n_replicates, mm.n_failed);
    return out;
}

std::string render_metrics_table(const std::vector<SimulationRow> &rows) {
    require_sim(rows);
    std::string out;
    const auto &first = rows.front().result;
    for (std::size_t c = 0; c < first.metrics.names.size(); ++c) {
        const std::string &coef = first.metrics.names[c];
        out += fmt::format("Coefficient: {}\n", coef);
        std::string head1 = fmt::format("{:<12}", "");
        std::string head2 = fmt::format("{:<12}", "setting");
        const std::size_t nm = first.methods.size();
        head1 += fmt::format("{:<{}}", "Mean percent bias (SE)", 24 * nm);
        head1 += fmt::format("{:<{}}", "MSE", 13 * nm);
        head1 += "Coverage rate";
        for (SimMethod m : first.methods)
            head2 += fmt::format("{:<24}", short_label(m));
        for (SimMethod m : first.methods)
            head2 += fmt::format("{:<13}", short_label(m));
        for (SimMethod m : first.methods)
            head2 += fmt::format("{:<10}", short_label(m));
        while (head2.back() == ' ')
            head2.pop_back();
        out += head1 + "\n" + head2 + "\n";
        for (const auto &row : rows) {
            std::string line = fmt::format("{:<12}", row.label);
            const auto &ms = row.result.metrics.methods;
            for (const auto &mm : ms) {
                const auto &cm = mm.coefficients[c];
                line += fmt::format("{:<24}", fmt::format("{} ({}) ", format_number(cm.mean_percent_bias),
                                                          format_number(cm.empirical_se)));
            }
            for (const auto &mm : ms)
                line += fmt::format("{:<13}", format_number(mm.coefficients[c].mse) + " ");
            for (const auto &mm : ms)
                line += fmt::format("{:<10}", format_number(mm.coefficients[c].coverage));
            while (!line.empty() && line.back() == ' ')
                line.pop_back();
            out += line + "\n";
        }
        out += "\n";
    }
    for (const auto &row : rows)
        for (const auto &w : row.result.metrics.warnings)
            out += fmt::format("warning [{}]: {}\n", row.label, w);
    return out;
}

std::string render_records_csv(const std::vector<SimulationRow> &rows) {
    require_sim(rows);
    std::string out = "setting,replicate,seed,method,ok,coefficient,truth,estimate,se\n";
    for (const auto &row : rows) {
        const auto &res = row.result;
        for (const auto &rec : res.records)
            for (std::size_t k = 0; k < res.methods.size(); ++k) {
                const MethodOutcome &o = rec.outcomes[k];
                for (std::size_t c = 0; c < res.metrics.names.size(); ++c) {
                    const auto i = static_cast<Eigen::Index>(c);
                    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", row.label, rec.index,
                                       rec.seed, to_string(res.methods[k]), o.ok ? 1 : 0,
                                       res.metrics.names[c], format_exact(res.metrics.truth(i)),
                                       o.ok ? format_exact(o.coef(i)) : "NA",
                                       o.ok ? format_exact(o.se(i)) : "NA");
                }
            }
    }
    return out;
}

std::vector<SimulationRow> read_records_csv(std::istream &in, const std::string &source) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line) || line != "setting,replicate,seed,method,ok,coefficient,truth,estimate,se")
        throw Error(ErrorCode::MalformedInput, fmt::format("{}:1: unexpected records header", source));
    ++line_no;

    struct Build {
        std::vector<SimMethod> methods;
        std::vector<std::string> names;
        std::vector<double> truth;
        std::vector<ReplicateRecord> records;
    };
    std::vector<std::pair<std::string, Build>> builds;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto f = split_csv(line, line_no, source);
        if (f.size() != 9)
            throw Error(ErrorCode::MalformedInput,
                        fmt::format("{}:{}: expected 9 fields", source, line_no));
        try {
            if (builds.empty() || builds.back().first != f[0])
                builds.emplace_back(f[0], Build{});
            Build &b = builds.back().second;
            const auto index = static_cast<std::uint64_t>(std::stoull(f[1]));
            const SimMethod method = method_from(f[3]);
            if (b.records.empty() || b.records.back().index != index) {
                ReplicateRecord r;
                r.index = index;
                r.seed = std::stoull(f[2]);
                b.records.push_back(std::move(r));
            }
            ReplicateRecord &r = b.records.back();
            if (b.records.size() == 1) {
                if (std::find(b.methods.begin(), b.methods.end(), method) == b.methods.end())
                    b.methods.push_back(method);
                if (b.methods.size() == 1) {
                    b.names.push_back(f[5]);
                    b.truth.push_back(parse_number(f[6]));
                }
            }
            const auto k = static_cast<std::size_t>(
                std::find(b.methods.begin(), b.methods.end(), method) - b.methods.begin());
            if (k == b.methods.size())
                throw Error(ErrorCode::MalformedInput, "method not present in first replicate");
            if (r.outcomes.size() <= k)
                r.outcomes.resize(k + 1);
            MethodOutcome &o = r.outcomes[k];
            o.ok = f[4] == "1";
            const auto p = static_cast<Eigen::Index>(b.names.size());
            if (o.coef.size() == 0) {
                o.coef = Eigen::VectorXd::Constant(p, std::nan(""));
                o.se = o.coef;
            }
            const auto c = static_cast<Eigen::Index>(
                std::find(b.names.begin(), b.names.end(), f[5]) - b.names.begin());
            if (c == p)
                throw Error(ErrorCode::MalformedInput, fmt::format("unknown coefficient '{}'", f[5]));
            if (o.ok) {
                o.coef(c) = parse_number(f[7]);
                o.se(c) = parse_number(f[8]);
            }
        } catch (const Error &e) {
            throw Error(ErrorCode::MalformedInput,
                        fmt::format("{}:{}: {}", source, line_no, e.what()));
        } catch (const std::exception &e) {
            throw Error(ErrorCode::MalformedInput,
                        fmt::format("{}:{}: malformed record ({})", source, line_no, e.what()));
        }
    }
    std::vector<SimulationRow> rows;
    for (auto &[label, b] : builds) {
        SimulationRow row;
        row.label = label;
        row.result.methods = b.methods;
        row.result.records = std::move(b.records);
        const Eigen::VectorXd truth =
            Eigen::Map<const Eigen::VectorXd>(b.truth.data(), static_cast<Eigen::Index>(b.truth.size()));
        row.result.metrics = summarize(b.methods, b.names, truth, row.result.records);
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw Error(ErrorCode::MalformedInput, fmt::format("{}: no records", source));
    return rows;
}

std::string render_fig1_csv(const std::vector<Fig1Point> &points) {
    if (points.empty())
        throw Error(ErrorCode::Precondition, "no results to report");
    std::string out = "rr,fit,parameter,mean_percent_bias,mc_se,replicates\n";
    for (const auto &p : points) {
        const auto line = [&](const char *fit, const char *param, double bias, double se) {
            out += fmt::format("{},{},{},{},{},{}\n", format_number(p.rr), fit, param,
                               format_number(bias), format_number(se), p.replicates);
        };
        line("controls_only", "intercept", p.controls_intercept_bias, p.controls_intercept_se);
        line("controls_only", "slope", p.controls_slope_bias, p.controls_slope_se);
        line("cases_and_controls", "intercept", p.pooled_intercept_bias, p.pooled_intercept_se);
        line("cases_and_controls", "slope", p.pooled_slope_bias, p.pooled_slope_se);
    }
    return out;
}

std::string render_fig1_table(const std::vector<Fig1Point> &points) {
    if (points.empty())
        throw Error(ErrorCode::Precondition, "no results to report");
    std::string out = "Mean percent bias of calibration parameters\n";
    out += fmt::format("{:<10}{:>18}{:>18}{:>18}{:>18}\n", "RR", "controls a", "controls b",
                       "cases+controls a", "cases+controls b");
    for (const auto &p : points)
        out += fmt::format("{:<10}{:>18}{:>18}{:>18}{:>18}\n", format_number(p.rr),
                           format_number(p.controls_intercept_bias),
                           format_number(p.controls_slope_bias),
                           format_number(p.pooled_intercept_bias),
                           format_number(p.pooled_slope_bias));
    return out;
}

std::string render_fig2_csv(const std::vector<Fig2Point> &points) {
    if (points.empty())
        throw Error(ErrorCode::Precondition, "no results to report");
    std::string out = "n_cal,method,coefficient,mean_percent_bias,empirical_se,mse,coverage,"
                      "n_replicates,n_failed\n";
    for (const auto &p : points)
        for (const auto &mm : p.metrics.methods)
            for (const auto &c : mm.coefficients)
                out += fmt::format("{},{},{},{},{},{},{},{},{}\n", p.n_cal, to_string(mm.method),
                                   c.name, format_number(c.mean_percent_bias),
                                   format_number(c.empirical_se), format_number(c.mse),
                                   format_number(c.coverage), mm.n_replicates, mm.n_failed);
    return out;
}

std::string render_fig2_table(const std::vector<Fig2Point> &points) {
    if (points.empty())
        throw Error(ErrorCode::Precondition, "no results to report");
    std::string out = "Mean percent bias of the exposure coefficient by calibration subset size\n";
    out += fmt::format("{:<8}", "n_cal");
    for (const auto &mm : points.front().metrics.methods)
        out += fmt::format("{:>14}", short_label(mm.method));
    out += '\n';
    for (const auto &p : points) {
        out += fmt::format("{:<8}", p.n_cal);
        for (const auto &mm : p.metrics.methods)
            out += fmt::format("{:>14}", format_number(mm.coefficients[0].mean_percent_bias));
        out += '\n';
    }
    return out;
}

} // namespace ccpool
