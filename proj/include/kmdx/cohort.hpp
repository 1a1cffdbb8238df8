#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kmdx/knowledge_bank.hpp"

namespace kmdx {

// Class-conditional blob painted into the noise volume.
struct ImageSignalSpec {
    bool enabled = false;
    double radius_frac = 0.22;
    // per class: blob center (fractional coordinates) and added intensity
    double center[2][3] = {{0.35, 0.35, 0.35}, {0.65, 0.65, 0.65}};
    double intensity[2] = {0.25, 0.55};
};

// Class-conditional distribution of one non-imaging factor.
struct CohortFactorSpec {
    FactorSpec spec;
    double mean[2] = {0.0, 0.0};  // Numeric / Age: normal per class
    double stddev[2] = {1.0, 1.0};
    std::vector<std::string> categories;  // Categorical
    std::vector<double> category_p[2];    // per class, sums to 1
    double history_p[2] = {0.5, 0.5};     // History: P(existent)
    double missing_p = 0.0;
    int decimals = 1;  // numeric rounding, keeps files and text exact
};

struct SyntheticCohortConfig {
    std::string name = "toy";
    int n_subjects = 400;
    double class_balance = 0.5;  // P(label = 1)
    int volume_side = 32;
    std::uint64_t seed = 0;
    double noise_level = 0.5;  // voxel noise drawn U(0, noise_level)
    ImageSignalSpec image_signal;
    std::vector<CohortFactorSpec> factors;
    // Imaging factor presence: each subject draws `imaging_per_subject`
    // factors from its class pool. Disjoint pools put label signal into the
    // knowledge channel only.
    std::vector<std::string> imaging_pool[2];
    int imaging_per_subject = 1;
    double train_frac = 0.7;
    double val_frac = 0.1;
};

struct Cohort {
    SyntheticCohortConfig config;
    FactorSchema schema;
    std::vector<FactorRecord> records;
    std::vector<int> train_idx, val_idx, test_idx;
};

Cohort generate_cohort(const SyntheticCohortConfig& config);

// Directory layout: cohort.json (config echo + schema + splits),
// records.tsv, volumes/<subject>.vol.
void save_cohort(const Cohort& cohort, const std::string& dir);
Cohort load_cohort(const std::string& dir);

// Raw volume files: 16-byte header (magic "KVOL", u32 version, u32 side,
// u32 reserved) followed by side^3 float32 little-endian voxels.
void write_volume(const std::string& path, int side,
                  const std::vector<float>& voxels);
std::vector<float> read_volume(const std::string& path, int* side_out);

// Generator-side oracle: mean voxel intensity inside the class-1 blob
// region, a label-separating score when the image signal is enabled.
std::vector<double> blob_oracle_scores(const Cohort& cohort);

// ---- Presets ----------------------------------------------------------------

// Label signal in every channel (default demo cohort).
SyntheticCohortConfig mixed_signal_config(int n, std::uint64_t seed,
                                          int volume_side = 32);
// Label-discriminative content only in knowledge entries: images are pure
// noise, non-imaging factors share distributions across classes, imaging
// factor pools are disjoint per class.
SyntheticCohortConfig knowledge_signal_config(int n, std::uint64_t seed,
                                              int volume_side = 16);
// Image blob only.
SyntheticCohortConfig blob_signal_config(int n, std::uint64_t seed,
                                         int volume_side = 32);
// No signal anywhere.
SyntheticCohortConfig null_signal_config(int n, std::uint64_t seed,
                                         int volume_side = 16);

SyntheticCohortConfig cohort_preset(const std::string& name, int n,
                                    std::uint64_t seed, int volume_side);

// Knowledge bank covering every schema factor, generated with the stub
// client (plus expert notes for a few factors, mirroring the expert-in-the-
// loop workflow).
KnowledgeBank stub_bank_for(const FactorSchema& schema);

}  // namespace kmdx
