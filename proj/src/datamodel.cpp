#include "ccpool/datamodel.hpp"
#include "ccpool/error.hpp"

#include <fmt/format.h>

#include <set>

namespace ccpool {

const Subject *Stratum::find_case() const {
    for (const auto &m : members)
        if (m.is_case)
            return &m;
    return nullptr;
}

std::size_t Stratum::n_controls() const {
    std::size_t n = 0;
    for (const auto &m : members)
        n += m.is_case ? 0 : 1;
    return n;
}

Eigen::Index DesignSpec::n_columns(std::size_t n_covariates) const {
    return static_cast<Eigen::Index>((include_interaction ? 3 : 1) + n_covariates);
}

std::vector<std::string> DesignSpec::column_names(std::size_t n_covariates) const {
    std::vector<std::string> names{"exposure"};
    if (include_interaction) {
        names.emplace_back("modifier");
        names.emplace_back("interaction");
    }
    for (std::size_t k = 0; k < n_covariates; ++k)
        names.push_back(k < covariate_names.size() ? covariate_names[k] : fmt::format("z{}", k + 1));
    return names;
}

std::size_t PooledDataset::covariate_dimension() const {
    for (const auto &study : studies)
        for (const auto &stratum : study.strata)
            for (const auto &m : stratum.members)
                return m.covariates.size();
    return 0;
}

std::size_t PooledDataset::n_strata() const {
    std::size_t n = 0;
    for (const auto &study : studies)
        n += study.strata.size();
    return n;
}

const Study *PooledDataset::find_study(const std::string &study_id) const {
    for (const auto &s : studies)
        if (s.study_id == study_id)
            return &s;
    return nullptr;
}

namespace {

struct Collector {
    ValidationReport report;

    void add(const Study &study, const std::string &stratum_id, const std::string &subject_id,
             const char *rule, Severity severity = Severity::Error) {
        report.push_back({study.study_id, stratum_id, subject_id, rule, severity});
    }
};

void check_subject(Collector &out, const Study &study, const std::string &stratum_id,
                   const Subject &m, std::size_t n_cov, int &modifier_state) {
    if (!m.local_w && !m.ref_x)
        out.add(study, stratum_id, m.subject_id, rules::no_measurement);
    if (m.in_calibration_subset) {
        if (m.is_case)
            out.add(study, stratum_id, m.subject_id, rules::case_in_calibration);
        if (!m.local_w || !m.ref_x)
            out.add(study, stratum_id, m.subject_id, rules::calibration_incomplete);
    }
    if (m.covariates.size() != n_cov)
        out.add(study, stratum_id, m.subject_id, rules::covariate_dimension);

    if (study.lab_kind == LabKind::Reference) {
        if (!m.ref_x)
            out.add(study, stratum_id, m.subject_id, rules::reference_missing_x);
        if (m.in_calibration_subset)
            out.add(study, stratum_id, m.subject_id, rules::reference_has_calibration);
    } else if (!m.local_w) {
        out.add(study, stratum_id, m.subject_id, rules::local_missing_w);
    }

    // 0 = unseen, 1 = present, 2 = absent, 3 = already reported
    const int state = m.effect_modifier ? 1 : 2;
    if (modifier_state == 0)
        modifier_state = state;
    else if (modifier_state != 3 && modifier_state != state) {
        out.add(study, stratum_id, m.subject_id, rules::modifier_inconsistent);
        modifier_state = 3;
    }
}

} // namespace

ValidationReport validate(const PooledDataset &dataset) {
    Collector out;
    const std::size_t n_cov = dataset.covariate_dimension();
    int modifier_state = 0;
    std::set<std::string> seen_ids;

    for (const auto &study : dataset.studies) {
        if (!seen_ids.insert(study.study_id).second)
            out.add(study, {}, {}, rules::duplicate_study);

        std::size_t n_calibration = 0;
        for (const auto &stratum : study.strata) {
            std::size_t n_cases = 0;
            for (const auto &m : stratum.members) {
                n_cases += m.is_case ? 1 : 0;
                n_calibration += m.in_calibration_subset ? 1 : 0;
                check_subject(out, study, stratum.stratum_id, m, n_cov, modifier_state);
                if (dataset.design.include_interaction && !m.effect_modifier)
                    out.add(study, stratum.stratum_id, m.subject_id, rules::modifier_missing);
            }
            if (n_cases > 1)
                out.add(study, stratum.stratum_id, {}, rules::multiple_cases);
            if (n_cases == 0)
                out.add(study, stratum.stratum_id, {}, rules::no_case);
            if (stratum.members.size() == n_cases)
                out.add(study, stratum.stratum_id, {}, rules::no_controls, Severity::Warning);
        }
        for (const auto &m : study.calibration_only) {
            n_calibration += m.in_calibration_subset ? 1 : 0;
            if (m.is_case)
                out.add(study, {}, m.subject_id, rules::case_in_calibration);
            if (!m.in_calibration_subset || !m.local_w || !m.ref_x)
                out.add(study, {}, m.subject_id, rules::calibration_incomplete);
            if (study.lab_kind == LabKind::Reference)
                out.add(study, {}, m.subject_id, rules::reference_has_calibration);
        }
        if (study.lab_kind == LabKind::Local && n_calibration == 0)
            out.add(study, {}, {}, rules::local_no_calibration);
    }

    if (!dataset.design.covariate_names.empty() && dataset.design.covariate_names.size() != n_cov)
        out.report.push_back({{}, {}, {}, rules::covariate_names, Severity::Error});
    return out.report;
}

bool is_ready(const ValidationReport &report) {
    for (const auto &v : report)
        if (v.severity == Severity::Error)
            return false;
    return true;
}

std::string describe(const Violation &v) {
    std::string where = fmt::format("study '{}'", v.study_id);
    if (!v.stratum_id.empty())
        where += fmt::format(", stratum '{}'", v.stratum_id);
    if (!v.subject_id.empty())
        where += fmt::format(", subject '{}'", v.subject_id);
    return fmt::format("{}: {} ({})", v.severity == Severity::Error ? "error" : "warning", v.rule,
                       where);
}

std::optional<double> local_exposure(const Subject &subject) { return subject.local_w; }
std::optional<double> reference_exposure(const Subject &subject) { return subject.ref_x; }

namespace {

double require_exposure(const ExposureAccessor &exposure, const Subject &m,
                        const Stratum &stratum) {
    const auto value = exposure(m);
    if (!value)
        throw Error(ErrorCode::MissingExposure,
                    fmt::format("missing exposure for subject '{}' in stratum '{}'", m.subject_id,
                                stratum.stratum_id));
    return *value;
}

void fill_row(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, const Subject &m, double x,
              const DesignSpec &design) {
    Eigen::Index c = 0;
    row(c++) = x;
    if (design.include_interaction) {
        const double v = m.effect_modifier.value_or(0.0);
        row(c++) = v;
        row(c++) = x * v;
    }
    for (double z : m.covariates)
        row(c++) = z;
}

} // namespace

Eigen::MatrixXd stratum_differences(const Stratum &stratum, const ExposureAccessor &exposure,
                                    const DesignSpec &design) {
    const Subject *index_case = stratum.find_case();
    if (!index_case)
        throw Error(ErrorCode::InvalidDataset,
                    fmt::format("stratum '{}' has no case", stratum.stratum_id));
    if (design.include_interaction) {
        for (const auto &m : stratum.members)
            if (!m.effect_modifier)
                throw Error(ErrorCode::MissingExposure,
                            fmt::format("missing effect modifier for subject '{}' in stratum '{}'",
                                        m.subject_id, stratum.stratum_id));
    }

    const Eigen::Index p = design.n_columns(index_case->covariates.size());
    Eigen::RowVectorXd case_row(p);
    fill_row(case_row, *index_case, require_exposure(exposure, *index_case, stratum), design);

    Eigen::MatrixXd rows(static_cast<Eigen::Index>(stratum.n_controls()), p);
    Eigen::Index r = 0;
    for (const auto &m : stratum.members) {
        if (m.is_case)
            continue;
        if (static_cast<Eigen::Index>(m.covariates.size()) != p - (design.include_interaction ? 3 : 1))
            throw Error(ErrorCode::InvalidDataset,
                        fmt::format("covariate dimension mismatch for subject '{}'", m.subject_id));
        fill_row(rows.row(r), m, require_exposure(exposure, m, stratum), design);
        rows.row(r) -= case_row;
        ++r;
    }
    return rows;
}

} // namespace ccpool
