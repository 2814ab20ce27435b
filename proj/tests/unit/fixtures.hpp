#pragma once

#include "ccpool/datamodel.hpp"

#include <cmath>
#include <random>
#include <string>

namespace fixtures {

struct ToyStudyOptions {
    std::string id;
    ccpool::LabKind lab = ccpool::LabKind::Local;
    int n_strata = 40;
    int n_controls = 1;
    int n_cal = 15;
    double a = 1.0;
    double b = 0.8;
    double noise_sd = 0.3;
    double beta = 0.7;
    bool modifier = false;
    int n_covariates = 0;
    double shift_w = 0.0;
};

// Small matched study: W ~ N(shift, 1), X = a + b W + noise, case chosen with
// probability proportional to exp(beta * X) among the stratum members.
inline ccpool::Study toy_study(const ToyStudyOptions &o, std::mt19937_64 &rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ccpool::Study s;
    s.study_id = o.id;
    s.lab_kind = o.lab;
    int n_cal_left = o.lab == ccpool::LabKind::Local ? o.n_cal : 0;
    for (int j = 0; j < o.n_strata; ++j) {
        ccpool::Stratum st;
        st.stratum_id = o.id + "-" + std::to_string(j);
        const int size = o.n_controls + 1;
        std::vector<double> xs(size), weights(size);
        double total = 0.0;
        for (int i = 0; i < size; ++i) {
            ccpool::Subject m;
            m.subject_id = st.stratum_id + "-" + std::to_string(i);
            const double w = o.shift_w + normal(rng);
            const double x = o.a + o.b * w + o.noise_sd * normal(rng);
            xs[i] = x;
            weights[i] = std::exp(o.beta * x);
            total += weights[i];
            if (o.lab == ccpool::LabKind::Local)
                m.local_w = w;
            m.ref_x = x;
            if (o.modifier)
                m.effect_modifier = normal(rng);
            for (int k = 0; k < o.n_covariates; ++k)
                m.covariates.push_back(normal(rng));
            st.members.push_back(m);
        }
        double u = unif(rng) * total;
        int chosen = size - 1;
        for (int i = 0; i < size; ++i) {
            if (u < weights[i]) {
                chosen = i;
                break;
            }
            u -= weights[i];
        }
        for (int i = 0; i < size; ++i) {
            auto &m = st.members[i];
            m.is_case = i == chosen;
            if (o.lab == ccpool::LabKind::Local) {
                if (!m.is_case && n_cal_left > 0 && i != chosen) {
                    m.in_calibration_subset = true;
                    --n_cal_left;
                } else {
                    m.ref_x.reset();
                }
            }
        }
        s.strata.push_back(std::move(st));
    }
    return s;
}

} // namespace fixtures
