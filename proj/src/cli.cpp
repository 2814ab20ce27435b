#include "ccpool/cli.hpp"
#include "ccpool/aggregate.hpp"
#include "ccpool/io.hpp"
#include "ccpool/twostage.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

namespace ccpool {

int exit_code_for(ErrorCategory category) {
    switch (category) {
    case ErrorCategory::Config:
        return kExitConfig;
    case ErrorCategory::Data:
        return kExitData;
    case ErrorCategory::Numerical:
        return kExitNumerical;
    case ErrorCategory::Contract:
        return kExitOther;
    }
    return kExitOther;
}

// ---------------------------------------------------------------- scenario files

namespace {

const std::set<std::string> kScalarDouble{"mu_x",   "sigma2_x", "mu_beta0", "sigma2_beta0",
                                          "beta_x", "sigma2_e", "mu_v",     "sigma2_v",
                                          "corr_xv", "beta_v",  "beta_xv",  "fig1_a",
                                          "fig1_b"};
const std::set<std::string> kScalarInt{"n_studies", "pairs_per_study", "n_cal",
                                       "pool_size_per_stratum", "replicates", "threads"};
const std::set<std::string> kDoubleList{"a", "b", "rr_grid"};
const std::set<std::string> kIntList{"n_cal_grid"};
const std::set<std::string> kOther{"interaction", "calib_cov", "seed"};

Error config_error(const std::string &msg) { return Error(ErrorCode::InvalidConfig, msg); }

std::string unquote(std::string s) {
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        return s.substr(1, s.size() - 2);
    return s;
}

double to_double(const std::string &key, const std::string &text) {
    try {
        const double v = parse_number(unquote(text));
        if (!std::isfinite(v))
            throw config_error("");
        return v;
    } catch (const Error &) {
        throw config_error(fmt::format("scenario key '{}': '{}' is not a finite number", key, text));
    }
}

long long to_int(const std::string &key, const std::string &text) {
    const double v = to_double(key, text);
    if (v != std::floor(v) || std::abs(v) > 1e15)
        throw config_error(fmt::format("scenario key '{}': '{}' is not an integer", key, text));
    return static_cast<long long>(v);
}

int to_count(const std::string &key, const std::string &text) {
    const long long v = to_int(key, text);
    if (v < 0 || v > std::numeric_limits<int>::max())
        throw config_error(fmt::format("scenario key '{}': '{}' is out of range", key, text));
    return static_cast<int>(v);
}

bool to_bool(const std::string &key, const std::string &text) {
    const std::string t = unquote(text);
    if (t == "true" || t == "1")
        return true;
    if (t == "false" || t == "0")
        return false;
    throw config_error(fmt::format("scenario key '{}': expected true or false, found '{}'", key, text));
}

CalibrationCovariance to_calib_cov(const std::string &text) {
    const std::string t = unquote(text);
    if (t == "full")
        return CalibrationCovariance::Full;
    if (t == "variance_only")
        return CalibrationCovariance::VarianceOnly;
    throw config_error(
        fmt::format("calib_cov must be 'full' or 'variance_only', found '{}'", text));
}

std::uint64_t to_seed(const std::string &text) {
    const std::string t = unquote(text);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size())
        throw config_error(fmt::format("seed must be a non-negative integer, found '{}'", text));
    return v;
}

const std::string &single(const ScenarioSpec &spec, const std::string &key) {
    const auto &v = spec.values.at(key);
    if (v.size() != 1)
        throw config_error(fmt::format("scenario key '{}' expects a single value", key));
    return v.front();
}

std::vector<double> double_list(const ScenarioSpec &spec, const std::string &key) {
    std::vector<double> out;
    for (const auto &t : spec.values.at(key))
        out.push_back(to_double(key, t));
    return out;
}

std::vector<int> int_list(const ScenarioSpec &spec, const std::string &key) {
    std::vector<int> out;
    for (const auto &t : spec.values.at(key))
        out.push_back(to_count(key, t));
    return out;
}

} // namespace

ScenarioSpec parse_scenario(std::istream &in, const std::string &source) {
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error &e) {
        throw config_error(fmt::format("{}: {}", source, e.what()));
    }
    ScenarioSpec spec;
    for (const auto &item : items) {
        if (item.name == "++" || item.name == "--")
            continue;
        const std::string key = item.fullname();
        const bool known = kScalarDouble.count(key) || kScalarInt.count(key) ||
                           kDoubleList.count(key) || kIntList.count(key) || kOther.count(key);
        if (!known)
            throw config_error(fmt::format("{}: unknown scenario key '{}'", source, key));
        if (spec.values.count(key))
            throw config_error(fmt::format("{}: scenario key '{}' given twice", source, key));
        spec.values[key] = item.inputs;
    }
    try {
        (void)apply_scenario(spec, ScenarioInteraction{});
        for (const char *k : {"replicates", "threads", "fig1_a", "fig1_b"})
            if (spec.has(k))
                (void)single(spec, k);
        if (spec.has("interaction"))
            (void)to_bool("interaction", single(spec, "interaction"));
        if (spec.has("calib_cov"))
            (void)to_calib_cov(single(spec, "calib_cov"));
        if (spec.has("seed"))
            (void)to_seed(single(spec, "seed"));
        if (spec.has("rr_grid"))
            (void)double_list(spec, "rr_grid");
        if (spec.has("n_cal_grid"))
            (void)int_list(spec, "n_cal_grid");
    } catch (const Error &e) {
        throw config_error(fmt::format("{}: {}", source, e.what()));
    }
    return spec;
}

ScenarioSpec load_scenario(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot open scenario file '{}'", path.string()));
    return parse_scenario(in, path.string());
}

ScenarioInteraction apply_scenario(const ScenarioSpec &spec, ScenarioInteraction s) {
    auto dbl = [&](const char *key, double &field) {
        if (spec.has(key))
            field = to_double(key, single(spec, key));
    };
    auto cnt = [&](const char *key, int &field) {
        if (spec.has(key))
            field = to_count(key, single(spec, key));
    };
    cnt("n_studies", s.n_studies);
    cnt("pairs_per_study", s.pairs_per_study);
    cnt("n_cal", s.n_cal);
    cnt("pool_size_per_stratum", s.pool_size_per_stratum);
    if (spec.has("a"))
        s.a = double_list(spec, "a");
    if (spec.has("b"))
        s.b = double_list(spec, "b");
    dbl("mu_x", s.mu_x);
    dbl("sigma2_x", s.sigma2_x);
    dbl("mu_beta0", s.mu_beta0);
    dbl("sigma2_beta0", s.sigma2_beta0);
    dbl("beta_x", s.beta_x);
    dbl("sigma2_e", s.sigma2_e);
    dbl("mu_v", s.mu_v);
    dbl("sigma2_v", s.sigma2_v);
    dbl("corr_xv", s.corr_xv);
    dbl("beta_v", s.beta_v);
    dbl("beta_xv", s.beta_xv);
    return s;
}

// ---------------------------------------------------------------- demo data

PooledDataset make_demo_dataset(std::uint64_t seed) {
    struct Shape {
        const char *id;
        int pairs;
        int n_cal;
        double a;
        double b;
    };
    const Shape shapes[] = {{"HPFS", 49, 25, 4.35, 0.94},
                            {"NHS1", 103, 27, 6.50, 0.84},
                            {"NHS2", 27, 28, 9.01, 0.95}};
    // Exposure in nmol/L; effects per nmol/L.
    const double mu_x = 60.0, sd_x = 20.0, sd_e = 5.0;
    const double beta0 = -2.5, beta_x = std::log(0.95) / 20.0, beta_v = std::log(0.7),
                 beta_xv = std::log(0.95) / 20.0, beta_z = std::log(1.4);
    const int pool = 20;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution modifier(0.45), smoker(0.4);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };

    struct Person {
        double x, w, v, z;
        bool y;
    };
    auto person = [&](const Shape &sh) {
        const double sd_w = std::sqrt(sd_x * sd_x - sd_e * sd_e) / sh.b;
        Person p;
        p.w = round2((mu_x - sh.a) / sh.b + sd_w * normal(rng));
        p.x = round2(sh.a + sh.b * p.w + sd_e * normal(rng));
        p.v = modifier(rng) ? 1.0 : 0.0;
        p.z = smoker(rng) ? 1.0 : 0.0;
        const double xc = p.x - mu_x;
        const double eta = beta0 + beta_x * xc + beta_v * p.v + beta_xv * xc * p.v + beta_z * p.z;
        p.y = unif(rng) < 1.0 / (1.0 + std::exp(-eta));
        return p;
    };
    auto subject = [](std::string id, bool is_case, const Person &p, bool in_cal) {
        Subject m;
        m.subject_id = std::move(id);
        m.is_case = is_case;
        m.local_w = p.w;
        if (in_cal)
            m.ref_x = p.x;
        m.in_calibration_subset = in_cal;
        m.effect_modifier = p.v;
        m.covariates = {p.z};
        return m;
    };

    PooledDataset data;
    data.design.covariate_names = {"smoking"};
    for (const Shape &sh : shapes) {
        Study study;
        study.study_id = sh.id;
        study.lab_kind = LabKind::Local;
        for (int j = 0; j < sh.pairs; ++j) {
            std::vector<Person> cases, controls;
            while (cases.empty() || controls.empty()) {
                cases.clear();
                controls.clear();
                for (int i = 0; i < pool; ++i) {
                    Person p = person(sh);
                    (p.y ? cases : controls).push_back(p);
                }
            }
            std::uniform_int_distribution<std::size_t> pick_case(0, cases.size() - 1);
            std::uniform_int_distribution<std::size_t> pick_ctl(0, controls.size() - 1);
            const Person c = cases[pick_case(rng)];
            const Person k = controls[pick_ctl(rng)];
            Stratum st;
            st.stratum_id = fmt::format("{}-{:03}", sh.id, j + 1);
            st.members.push_back(subject(st.stratum_id + "-case", true, c, false));
            st.members.push_back(subject(st.stratum_id + "-ctl", false, k, j < sh.n_cal));
            study.strata.push_back(std::move(st));
        }
        for (int extra = sh.pairs; extra < sh.n_cal; ++extra) {
            Person p = person(sh);
            study.calibration_only.push_back(
                subject(fmt::format("{}-cal{:03}", sh.id, extra + 1), false, p, true));
        }
        data.studies.push_back(std::move(study));
    }
    return data;
}

// ---------------------------------------------------------------- commands

namespace {

struct Common {
    std::string out_dir;
    std::vector<std::string> formats;
    std::vector<std::string> methods;
    std::string scenario;
    std::vector<double> rr;
    std::optional<double> beta_v;
    std::optional<double> beta_xv;
    std::optional<int> replicates;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool interaction = false;
    std::string calib_cov;
    std::string input;
    double exposure_scale = 1.0;
};

bool wants(const Common &c, const char *format) {
    return std::find(c.formats.begin(), c.formats.end(), format) != c.formats.end();
}

std::vector<SimMethod> sim_methods(const std::vector<std::string> &names) {
    std::vector<SimMethod> out;
    auto add = [&](SimMethod m) {
        if (std::find(out.begin(), out.end(), m) == out.end())
            out.push_back(m);
    };
    for (const auto &n : names) {
        if (n == "all") {
            for (SimMethod m : all_sim_methods())
                add(m);
        } else if (n == "naive") {
            add(SimMethod::Naive);
        } else if (n == "internalized") {
            add(SimMethod::Internalized);
        } else if (n == "full") {
            add(SimMethod::FullCalibration);
        } else if (n == "twostage") {
            add(SimMethod::TwoStage);
        }
    }
    std::vector<SimMethod> ordered;
    for (SimMethod m : all_sim_methods())
        if (std::find(out.begin(), out.end(), m) != out.end())
            ordered.push_back(m);
    return ordered;
}

std::string join(const std::vector<std::string> &v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k)
        s += (k ? "," : "") + v[k];
    return s;
}

std::string join_doubles(const std::vector<double> &v) {
    std::vector<std::string> s;
    for (double d : v)
        s.push_back(format_exact(d));
    return join(s);
}

std::vector<std::string> method_names(const std::vector<SimMethod> &methods) {
    std::vector<std::string> s;
    for (SimMethod m : methods)
        s.push_back(to_string(m));
    return s;
}

void add_scenario_config(Manifest &m, const ScenarioMain &s) {
    auto &c = m.config;
    c.emplace_back("n_studies", std::to_string(s.n_studies));
    c.emplace_back("pairs_per_study", std::to_string(s.pairs_per_study));
    c.emplace_back("n_cal", std::to_string(s.n_cal));
    c.emplace_back("a", join_doubles(s.a));
    c.emplace_back("b", join_doubles(s.b));
    c.emplace_back("mu_x", format_exact(s.mu_x));
    c.emplace_back("sigma2_x", format_exact(s.sigma2_x));
    c.emplace_back("mu_beta0", format_exact(s.mu_beta0));
    c.emplace_back("sigma2_beta0", format_exact(s.sigma2_beta0));
    c.emplace_back("sigma2_e", format_exact(s.sigma2_e));
    c.emplace_back("pool_size_per_stratum", std::to_string(s.pool_size_per_stratum));
}

void add_modifier_config(Manifest &m, const ScenarioInteraction &s) {
    auto &c = m.config;
    c.emplace_back("mu_v", format_exact(s.mu_v));
    c.emplace_back("sigma2_v", format_exact(s.sigma2_v));
    c.emplace_back("corr_xv", format_exact(s.corr_xv));
    c.emplace_back("beta_v", format_exact(s.beta_v));
    c.emplace_back("beta_xv", format_exact(s.beta_xv));
}

/// Writes or prints the rendered files; the manifest is added when writing.
int emit(const Common &c, Manifest manifest,
         std::vector<std::pair<std::string, std::string>> files, std::ostream &out) {
    if (files.empty())
        throw Error(ErrorCode::Precondition, "no output format selected");
    if (c.out_dir.empty()) {
        const auto table = std::find_if(files.begin(), files.end(),
                                        [](const auto &f) { return f.first.ends_with(".txt"); });
        out << (table != files.end() ? table->second : files.front().second);
        return kExitOk;
    }
    std::vector<std::string> names;
    for (const auto &f : files)
        names.push_back(f.first);
    files.emplace_back("manifest.json", render_manifest(manifest, names));
    write_outputs(c.out_dir, files);
    for (const auto &f : files)
        out << (std::filesystem::path(c.out_dir) / f.first).string() << '\n';
    return kExitOk;
}

struct Settings {
    ScenarioSpec spec;
    std::uint64_t seed = kDefaultSeed;
    int replicates = 1000;
    unsigned threads = 0;
    CalibrationCovariance calib_cov = CalibrationCovariance::Full;
    bool interaction = false;
};

Settings resolve(const Common &c) {
    Settings s;
    if (!c.scenario.empty())
        s.spec = load_scenario(c.scenario);
    if (s.spec.has("seed"))
        s.seed = to_seed(single(s.spec, "seed"));
    if (c.seed)
        s.seed = *c.seed;
    if (s.spec.has("replicates"))
        s.replicates = to_count("replicates", single(s.spec, "replicates"));
    if (c.replicates)
        s.replicates = *c.replicates;
    if (s.replicates < 1)
        throw config_error("replicates must be at least 1");
    if (s.spec.has("threads"))
        s.threads = static_cast<unsigned>(to_count("threads", single(s.spec, "threads")));
    if (c.threads)
        s.threads = *c.threads;
    if (s.spec.has("calib_cov"))
        s.calib_cov = to_calib_cov(single(s.spec, "calib_cov"));
    if (!c.calib_cov.empty())
        s.calib_cov = to_calib_cov(c.calib_cov);
    if (s.spec.has("interaction"))
        s.interaction = to_bool("interaction", single(s.spec, "interaction"));
    s.interaction = s.interaction || c.interaction;
    return s;
}

std::string rr_label(double rr) { return fmt::format("log({:.2f})", rr); }

int cmd_analyze(const Common &c, std::ostream &out, std::ostream &err) {
    IngestResult ingest = ingest_csv(c.input);
    DesignSpec design = ingest.dataset.design;
    design.include_interaction = c.interaction;
    if (!(c.exposure_scale > 0.0) || !std::isfinite(c.exposure_scale))
        throw config_error("exposure scale must be positive");
    design.exposure_scale = c.exposure_scale;
    CalibrationCovariance calib_cov = CalibrationCovariance::Full;
    if (!c.calib_cov.empty())
        calib_cov = to_calib_cov(c.calib_cov);

    const std::vector<SimMethod> methods = sim_methods(c.methods);
    AnalysisReport report;
    report.design = design;
    report.warnings = ingest.warnings;
    // Row order of the applied-analysis tables.
    for (SimMethod m : {SimMethod::Internalized, SimMethod::FullCalibration, SimMethod::TwoStage,
                        SimMethod::Naive}) {
        if (std::find(methods.begin(), methods.end(), m) == methods.end())
            continue;
        AnalysisRow row;
        if (m == SimMethod::TwoStage) {
            const MetaResult meta = estimate_twostage(ingest.dataset, design, calib_cov);
            row = {"Two-stage", meta.names, meta.coef, meta.se};
        } else {
            const Method am = m == SimMethod::Naive           ? Method::Naive
                              : m == SimMethod::Internalized ? Method::Internalized
                                                             : Method::FullCalibration;
            const AggregatedEstimate est = estimate(ingest.dataset, am, design);
            Eigen::VectorXd se(est.beta.size());
            for (Eigen::Index k = 0; k < se.size(); ++k)
                se(k) = est.se(k);
            const char *label = m == SimMethod::Naive           ? "Naive"
                                : m == SimMethod::Internalized ? "Internalized"
                                                               : "Full calibration";
            row = {label, est.names, est.beta, se};
            for (const auto &w : est.warnings)
                report.warnings.push_back(fmt::format("{}: {}", label, w));
        }
        report.rows.push_back(std::move(row));
    }
    for (const auto &w : report.warnings)
        err << "warning: " << w << '\n';

    Manifest manifest;
    manifest.command = "analyze";
    manifest.config = {{"input", c.input},
                       {"methods", join(method_names(methods))},
                       {"interaction", c.interaction ? "true" : "false"},
                       {"exposure_scale", format_exact(design.exposure_scale)},
                       {"calib_cov", calib_cov == CalibrationCovariance::Full ? "full" : "variance_only"}};
    std::vector<std::pair<std::string, std::string>> files;
    if (wants(c, "csv"))
        files.emplace_back("analysis.csv", render_analysis_csv(report));
    if (wants(c, "table"))
        files.emplace_back("analysis.txt", render_analysis_table(report));
    return emit(c, manifest, files, out);
}

int cmd_simulate(const Common &c, std::ostream &out, std::ostream &err) {
    const Settings s = resolve(c);
    ScenarioInteraction scenario = apply_scenario(s.spec, ScenarioInteraction{});
    if (c.beta_v)
        scenario.beta_v = *c.beta_v;
    if (c.beta_xv)
        scenario.beta_xv = *c.beta_xv;

    std::vector<double> rr = c.rr;
    if (rr.empty() && s.spec.has("rr_grid"))
        rr = double_list(s.spec, "rr_grid");
    if (rr.empty() && s.spec.has("beta_x"))
        rr = {std::exp(scenario.beta_x)};
    if (rr.empty())
        rr = s.interaction ? std::vector<double>{0.5, 0.8, 1.2, 1.5, 2.0, 2.5}
                           : std::vector<double>{1.25, 1.5, 1.75, 2.0, 2.25, 2.5};
    for (double r : rr)
        if (!(r > 0.0) || !std::isfinite(r))
            throw config_error(fmt::format("relative risk {} must be positive", r));

    RunOptions options;
    options.methods = sim_methods(c.methods);
    options.replicates = s.replicates;
    options.seed = s.seed;
    options.threads = s.threads;
    options.calib_cov = s.calib_cov;

    std::vector<SimulationRow> rows;
    for (double r : rr) {
        ScenarioInteraction sc = scenario;
        sc.beta_x = std::log(r);
        SimulationRow row;
        row.label = rr_label(r);
        if (s.interaction)
            row.result = run_replicates(sc, options);
        else
            row.result = run_replicates(static_cast<const ScenarioMain &>(sc), options);
        for (const auto &w : row.result.metrics.warnings)
            err << "warning [" << row.label << "]: " << w << '\n';
        rows.push_back(std::move(row));
    }

    Manifest manifest;
    manifest.command = "simulate";
    manifest.seed = s.seed;
    manifest.has_seed = true;
    manifest.config = {{"interaction", s.interaction ? "true" : "false"},
                       {"rr_grid", join_doubles(rr)},
                       {"methods", join(method_names(options.methods))},
                       {"replicates", std::to_string(s.replicates)},
                       {"calib_cov", s.calib_cov == CalibrationCovariance::Full ? "full" : "variance_only"}};
    add_scenario_config(manifest, scenario);
    if (s.interaction)
        add_modifier_config(manifest, scenario);

    std::vector<std::pair<std::string, std::string>> files;
    if (wants(c, "csv")) {
        files.emplace_back("metrics.csv", render_metrics_csv(rows));
        files.emplace_back("records.csv", render_records_csv(rows));
    }
    if (wants(c, "table"))
        files.emplace_back("metrics.txt", render_metrics_table(rows));
    return emit(c, manifest, files, out);
}

int cmd_fig1(const Common &c, std::ostream &out) {
    const Settings s = resolve(c);
    Fig1Config cfg;
    ScenarioInteraction base;
    static_cast<ScenarioMain &>(base) = Fig1Config::fig1_base();
    cfg.base = apply_scenario(s.spec, base);
    if (s.spec.has("fig1_a"))
        cfg.a = to_double("fig1_a", single(s.spec, "fig1_a"));
    if (s.spec.has("fig1_b"))
        cfg.b = to_double("fig1_b", single(s.spec, "fig1_b"));
    if (s.spec.has("rr_grid"))
        cfg.rr_grid = double_list(s.spec, "rr_grid");
    if (!c.rr.empty())
        cfg.rr_grid = c.rr;
    cfg.replicates = s.replicates;
    cfg.seed = s.seed;
    cfg.threads = s.threads;
    const auto points = fig1_experiment(cfg);

    Manifest manifest;
    manifest.command = "fig1";
    manifest.seed = s.seed;
    manifest.has_seed = true;
    manifest.config = {{"fig1_a", format_exact(cfg.a)},
                       {"fig1_b", format_exact(cfg.b)},
                       {"rr_grid", join_doubles(cfg.rr_grid)},
                       {"replicates", std::to_string(cfg.replicates)}};
    add_scenario_config(manifest, cfg.base);
    std::vector<std::pair<std::string, std::string>> files;
    if (wants(c, "csv"))
        files.emplace_back("fig1.csv", render_fig1_csv(points));
    if (wants(c, "table"))
        files.emplace_back("fig1.txt", render_fig1_table(points));
    return emit(c, manifest, files, out);
}

int cmd_fig2(const Common &c, std::ostream &out) {
    const Settings s = resolve(c);
    Fig2Config cfg;
    ScenarioInteraction base;
    static_cast<ScenarioMain &>(base) = Fig2Config::fig2_base();
    cfg.base = apply_scenario(s.spec, base);
    if (!c.rr.empty()) {
        if (c.rr.size() != 1)
            throw config_error("fig2 takes a single --rr");
        cfg.base.beta_x = std::log(c.rr.front());
    }
    if (s.spec.has("n_cal_grid"))
        cfg.n_cal_grid = int_list(s.spec, "n_cal_grid");
    cfg.replicates = s.replicates;
    cfg.seed = s.seed;
    cfg.threads = s.threads;
    const auto points = fig2_experiment(cfg);

    std::vector<std::string> grid;
    for (int n : cfg.n_cal_grid)
        grid.push_back(std::to_string(n));
    Manifest manifest;
    manifest.command = "fig2";
    manifest.seed = s.seed;
    manifest.has_seed = true;
    manifest.config = {{"n_cal_grid", join(grid)},
                       {"beta_x", format_exact(cfg.base.beta_x)},
                       {"replicates", std::to_string(cfg.replicates)}};
    add_scenario_config(manifest, cfg.base);
    std::vector<std::pair<std::string, std::string>> files;
    if (wants(c, "csv"))
        files.emplace_back("fig2.csv", render_fig2_csv(points));
    if (wants(c, "table"))
        files.emplace_back("fig2.txt", render_fig2_table(points));
    return emit(c, manifest, files, out);
}

int cmd_summarize(const Common &c, std::ostream &out) {
    std::ifstream in(c.input);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", c.input));
    const auto rows = read_records_csv(in, c.input);
    Manifest manifest;
    manifest.command = "summarize";
    manifest.config = {{"input", c.input}};
    std::vector<std::pair<std::string, std::string>> files;
    if (wants(c, "csv"))
        files.emplace_back("metrics.csv", render_metrics_csv(rows));
    if (wants(c, "table"))
        files.emplace_back("metrics.txt", render_metrics_table(rows));
    return emit(c, manifest, files, out);
}

int cmd_demo(const Common &c, std::ostream &out) {
    const PooledDataset data = make_demo_dataset(c.seed.value_or(kDefaultSeed));
    std::ostringstream csv;
    write_dataset_csv(csv, data);
    if (c.out_dir.empty()) {
        out << csv.str();
        return kExitOk;
    }
    const std::filesystem::path path(c.out_dir);
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    write_outputs(dir, {{path.filename().string(), csv.str()}});
    out << path.string() << '\n';
    return kExitOk;
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Calibration and pooling of biomarker data from matched case-control studies"};
    app.require_subcommand(1);
    Common c;
    c.formats = {"csv", "table"};
    c.methods = {"all"};
    const std::vector<std::string> method_choices{"naive", "internalized", "full", "twostage", "all"};

    auto add_output = [&](CLI::App *sub) {
        sub->add_option("--out", c.out_dir, "Output directory (prints to stdout when omitted)");
        sub->add_option("--format", c.formats, "Output formats")
            ->check(CLI::IsMember({"csv", "table"}))
            ->expected(1, 2);
    };
    auto add_sim = [&](CLI::App *sub) {
        sub->add_option("--scenario", c.scenario, "Scenario file (key = value)");
        sub->add_option("--replicates", c.replicates, "Monte Carlo replicates")
            ->check(CLI::PositiveNumber);
        sub->add_option("--seed", c.seed, "Master seed");
        sub->add_option("--threads", c.threads, "Worker threads (0: all cores)");
        add_output(sub);
    };

    CLI::App *analyze = app.add_subcommand("analyze", "Pool a case-control dataset");
    analyze->add_option("--input", c.input, "Input CSV")->required();
    analyze->add_option("--method", c.methods, "Methods")->check(CLI::IsMember(method_choices));
    analyze->add_flag("--interaction", c.interaction, "Include the modifier and interaction");
    analyze->add_option("--exposure-scale", c.exposure_scale,
                        "Exposure units per reported unit (e.g. 20)");
    analyze->add_option("--calib-cov", c.calib_cov, "full | variance_only");
    add_output(analyze);

    CLI::App *simulate = app.add_subcommand("simulate", "Monte Carlo operating characteristics");
    simulate->add_option("--rr", c.rr, "Relative risk of the exposure (repeatable)");
    simulate->add_option("--method", c.methods, "Methods")->check(CLI::IsMember(method_choices));
    simulate->add_flag("--interaction", c.interaction, "Interaction scenario");
    simulate->add_option("--beta-v", c.beta_v, "Modifier log relative risk");
    simulate->add_option("--beta-xv", c.beta_xv, "Interaction log relative risk");
    simulate->add_option("--calib-cov", c.calib_cov, "full | variance_only");
    add_sim(simulate);

    CLI::App *fig1 = app.add_subcommand("fig1", "Calibration parameter bias by relative risk");
    fig1->add_option("--rr", c.rr, "Relative risk grid (repeatable)");
    add_sim(fig1);

    CLI::App *fig2 = app.add_subcommand("fig2", "Exposure bias by calibration subset size");
    fig2->add_option("--rr", c.rr, "Relative risk");
    add_sim(fig2);

    CLI::App *summarize = app.add_subcommand("summarize", "Recompute metrics from records.csv");
    summarize->add_option("--input", c.input, "records.csv")->required();
    add_output(summarize);

    CLI::App *demo = app.add_subcommand("demo", "Write the synthetic demo dataset");
    demo->add_option("--out", c.out_dir, "Output CSV path (stdout when omitted)");
    demo->add_option("--seed", c.seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (analyze->parsed())
            return cmd_analyze(c, out, err);
        if (simulate->parsed())
            return cmd_simulate(c, out, err);
        if (fig1->parsed())
            return cmd_fig1(c, out);
        if (fig2->parsed())
            return cmd_fig2(c, out);
        if (summarize->parsed())
            return cmd_summarize(c, out);
        if (demo->parsed())
            return cmd_demo(c, out);
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.category());
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kExitOther;
    }
    return kExitOther;
}

} // namespace ccpool
