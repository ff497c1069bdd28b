#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgb/graph.hpp"

namespace mgb {

// Synthetic heterogeneous social-graph specification. Users are partitioned
// into communities with power-law activity; documents attach to users of
// their community; the homophily target steers how strongly document class
// follows community. Features are class-conditional Gaussians with unit
// covariance whose means can be rotated/translated to emulate domain shift.
struct SyntheticSpec {
    int64_t n_docs = 1000;
    int64_t n_users = 600;
    int32_t num_classes = 2;
    std::vector<double> class_proportions;  // empty = uniform
    int64_t feature_dim = 16;
    double separation = 2.0;       // pairwise distance between class means
    double homophily = 0.8;        // h* in [0,1]
    double pareto_alpha = 1.5;     // user activity tail
    int n_communities = 20;
    double intra_edge_rate = 2.0;  // expected user-user edges per user, in-community
    double inter_edge_rate = 0.5;  // expected cross-community edges per user
    int max_users_per_doc = 3;
    double rotation_angle_deg = 0.0;           // applied to class means, plane (0,1)
    std::vector<double> mean_translation;      // empty = none
    uint64_t seed = 0;

    void validate() const;
    std::vector<double> proportions() const;   // normalised, uniform fallback
    // Class mean vectors after rotation and translation.
    std::vector<std::vector<double>> class_means() const;
};

SocialGraph generate(const SyntheticSpec& spec);

// Domain-shift operator: rotate class means inside the (0,1) feature plane
// and translate them; optionally change the class count (the proportions
// reset to uniform when it changes). Structure parameters are inherited and
// may be edited by the caller afterwards.
SyntheticSpec shift_domain(const SyntheticSpec& spec, double angle_deg, std::vector<double> translation,
                           std::optional<int32_t> new_num_classes = std::nullopt);

// Named label-proportion presets mirroring common benchmark imbalances.
std::vector<double> proportion_preset(const std::string& name);

}  // namespace mgb
