#include "kmdx/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kmdx/common.hpp"
#include "kmdx/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kmdx {

namespace {

constexpr char kVolumeMagic[4] = {'K', 'V', 'O', 'L'};
constexpr std::uint32_t kVolumeVersion = 1;
constexpr int kCohortFormatVersion = 1;

// Canonicalize a rounded value through its printed form so that
// save -> load reproduces the exact double.
double canonical_round(double v, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double rounded = std::round(v * scale) / scale;
    return std::strtod(format_number(rounded).c_str(), nullptr);
}

std::string subject_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "subj_%04d", i);
    return buf;
}

json spec_to_json(const CohortFactorSpec& f) {
    json j;
    j["name"] = f.spec.name;
    j["kind"] = factor_kind_name(f.spec.kind);
    j["mean"] = {f.mean[0], f.mean[1]};
    j["stddev"] = {f.stddev[0], f.stddev[1]};
    j["categories"] = f.categories;
    j["category_p0"] = f.category_p[0];
    j["category_p1"] = f.category_p[1];
    j["history_p"] = {f.history_p[0], f.history_p[1]};
    j["missing_p"] = f.missing_p;
    j["decimals"] = f.decimals;
    return j;
}

CohortFactorSpec spec_from_json(const json& j) {
    CohortFactorSpec f;
    f.spec.name = j.at("name").get<std::string>();
    f.spec.kind = factor_kind_from_name(j.at("kind").get<std::string>());
    f.mean[0] = j.at("mean")[0];
    f.mean[1] = j.at("mean")[1];
    f.stddev[0] = j.at("stddev")[0];
    f.stddev[1] = j.at("stddev")[1];
    f.categories = j.at("categories").get<std::vector<std::string>>();
    f.category_p[0] = j.at("category_p0").get<std::vector<double>>();
    f.category_p[1] = j.at("category_p1").get<std::vector<double>>();
    f.history_p[0] = j.at("history_p")[0];
    f.history_p[1] = j.at("history_p")[1];
    f.missing_p = j.at("missing_p");
    f.decimals = j.at("decimals");
    return f;
}

json config_to_json(const SyntheticCohortConfig& c) {
    json j;
    j["name"] = c.name;
    j["n_subjects"] = c.n_subjects;
    j["class_balance"] = c.class_balance;
    j["volume_side"] = c.volume_side;
    j["seed"] = c.seed;
    j["noise_level"] = c.noise_level;
    j["image_signal"] = {
        {"enabled", c.image_signal.enabled},
        {"radius_frac", c.image_signal.radius_frac},
        {"center0", {c.image_signal.center[0][0], c.image_signal.center[0][1],
                     c.image_signal.center[0][2]}},
        {"center1", {c.image_signal.center[1][0], c.image_signal.center[1][1],
                     c.image_signal.center[1][2]}},
        {"intensity", {c.image_signal.intensity[0],
                       c.image_signal.intensity[1]}}};
    json fs_ = json::array();
    for (const auto& f : c.factors) fs_.push_back(spec_to_json(f));
    j["factors"] = std::move(fs_);
    j["imaging_pool0"] = c.imaging_pool[0];
    j["imaging_pool1"] = c.imaging_pool[1];
    j["imaging_per_subject"] = c.imaging_per_subject;
    j["train_frac"] = c.train_frac;
    j["val_frac"] = c.val_frac;
    return j;
}

SyntheticCohortConfig config_from_json(const json& j) {
    SyntheticCohortConfig c;
    c.name = j.at("name").get<std::string>();
    c.n_subjects = j.at("n_subjects");
    c.class_balance = j.at("class_balance");
    c.volume_side = j.at("volume_side");
    c.seed = j.at("seed");
    c.noise_level = j.at("noise_level");
    const json& is = j.at("image_signal");
    c.image_signal.enabled = is.at("enabled");
    c.image_signal.radius_frac = is.at("radius_frac");
    for (int k = 0; k < 3; ++k) {
        c.image_signal.center[0][k] = is.at("center0")[static_cast<size_t>(k)];
        c.image_signal.center[1][k] = is.at("center1")[static_cast<size_t>(k)];
    }
    c.image_signal.intensity[0] = is.at("intensity")[0];
    c.image_signal.intensity[1] = is.at("intensity")[1];
    for (const auto& f : j.at("factors")) c.factors.push_back(spec_from_json(f));
    c.imaging_pool[0] = j.at("imaging_pool0").get<std::vector<std::string>>();
    c.imaging_pool[1] = j.at("imaging_pool1").get<std::vector<std::string>>();
    c.imaging_per_subject = j.at("imaging_per_subject");
    c.train_frac = j.at("train_frac");
    c.val_frac = j.at("val_frac");
    return c;
}

FactorSchema schema_for(const SyntheticCohortConfig& c) {
    FactorSchema schema;
    for (const auto& f : c.factors) schema.factors.push_back(f.spec);
    std::vector<std::string> imaging = c.imaging_pool[0];
    for (const auto& name : c.imaging_pool[1])
        if (std::find(imaging.begin(), imaging.end(), name) == imaging.end())
            imaging.push_back(name);
    for (const auto& name : imaging)
        schema.factors.push_back({name, FactorKind::Imaging});
    return schema;
}

}  // namespace

Cohort generate_cohort(const SyntheticCohortConfig& config) {
    if (config.n_subjects < 10)
        throw ConfigError("cohort of " + std::to_string(config.n_subjects) +
                          " subjects is too small for 70/10/20 splits");
    if (config.imaging_per_subject >
        static_cast<int>(std::min(config.imaging_pool[0].size(),
                                  config.imaging_pool[1].size())))
        throw ConfigError("imaging_per_subject exceeds pool size");
    Cohort cohort;
    cohort.config = config;
    cohort.schema = schema_for(config);
    const int side = config.volume_side;
    const double radius = config.image_signal.radius_frac * side;

    auto label_rng = rng_for(config.seed, "labels");
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int i = 0; i < config.n_subjects; ++i) {
        FactorRecord rec;
        rec.subject_id = subject_name(i);
        rec.label = unit(label_rng) < config.class_balance ? 1 : 0;
        rec.volume_side = side;

        // volume: noise plus optional class blob
        auto vol_rng = rng_for(config.seed, "volume", static_cast<std::uint64_t>(i));
        std::uniform_real_distribution<double> noise(0.0, config.noise_level);
        rec.volume.resize(static_cast<size_t>(side) * side * side);
        const double* ctr = config.image_signal.center[rec.label];
        const double cx = ctr[0] * side, cy = ctr[1] * side, cz = ctr[2] * side;
        const double add = config.image_signal.intensity[rec.label];
        size_t vi = 0;
        for (int x = 0; x < side; ++x)
            for (int y = 0; y < side; ++y)
                for (int z = 0; z < side; ++z, ++vi) {
                    double v = noise(vol_rng);
                    if (config.image_signal.enabled) {
                        const double dx = x - cx, dy = y - cy, dz = z - cz;
                        if (dx * dx + dy * dy + dz * dz <= radius * radius)
                            v += add;
                    }
                    rec.volume[vi] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }

        // non-imaging factors
        auto fac_rng = rng_for(config.seed, "factors", static_cast<std::uint64_t>(i));
        for (const auto& f : config.factors) {
            FactorValue value = FactorValue::none();
            if (unit(fac_rng) >= f.missing_p) {
                switch (f.spec.kind) {
                    case FactorKind::Numeric:
                    case FactorKind::Age: {
                        std::normal_distribution<double> dist(
                            f.mean[rec.label], f.stddev[rec.label]);
                        value = FactorValue::num(
                            canonical_round(dist(fac_rng), f.decimals));
                        break;
                    }
                    case FactorKind::Categorical: {
                        const auto& probs = f.category_p[rec.label];
                        double r = unit(fac_rng);
                        size_t pick = probs.size() - 1;
                        for (size_t k = 0; k < probs.size(); ++k) {
                            r -= probs[k];
                            if (r <= 0.0) {
                                pick = k;
                                break;
                            }
                        }
                        value = FactorValue::cat(f.categories[pick]);
                        break;
                    }
                    case FactorKind::History:
                        value = FactorValue::history(
                            unit(fac_rng) < f.history_p[rec.label]);
                        break;
                    case FactorKind::Imaging:
                        throw ConfigError(
                            "imaging factors belong in the pools, not in "
                            "factor specs");
                }
            }
            rec.non_imaging[f.spec.name] = value;
        }

        // imaging factor presence from the class pool
        auto img_rng = rng_for(config.seed, "imaging", static_cast<std::uint64_t>(i));
        std::vector<std::string> pool = config.imaging_pool[rec.label];
        std::shuffle(pool.begin(), pool.end(), img_rng);
        pool.resize(static_cast<size_t>(config.imaging_per_subject));
        // keep schema order
        for (const auto& f : cohort.schema.factors)
            if (f.kind == FactorKind::Imaging &&
                std::find(pool.begin(), pool.end(), f.name) != pool.end())
                rec.imaging_present.push_back(f.name);

        cohort.records.push_back(std::move(rec));
    }

    // subject-wise 70/10/20 splits
    std::vector<int> order(static_cast<size_t>(config.n_subjects));
    std::iota(order.begin(), order.end(), 0);
    auto split_rng = rng_for(config.seed, "split");
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_train = static_cast<int>(config.train_frac * config.n_subjects);
    const int n_val = static_cast<int>(config.val_frac * config.n_subjects);
    if (n_train <= 0 || n_val < 0 ||
        n_train + n_val >= config.n_subjects)
        throw ConfigError("split fractions leave no test subjects");
    cohort.train_idx.assign(order.begin(), order.begin() + n_train);
    cohort.val_idx.assign(order.begin() + n_train,
                          order.begin() + n_train + n_val);
    cohort.test_idx.assign(order.begin() + n_train + n_val, order.end());
    return cohort;
}

void write_volume(const std::string& path, int side,
                  const std::vector<float>& voxels) {
    if (voxels.size() != static_cast<size_t>(side) * side * side)
        throw ContractError("volume buffer does not match side^3");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write volume " + path);
    out.write(kVolumeMagic, 4);
    const std::uint32_t version = kVolumeVersion, s = static_cast<std::uint32_t>(side),
                        reserved = 0;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&s), 4);
    out.write(reinterpret_cast<const char*>(&reserved), 4);
    out.write(reinterpret_cast<const char*>(voxels.data()),
              static_cast<std::streamsize>(voxels.size() * sizeof(float)));
}

std::vector<float> read_volume(const std::string& path, int* side_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read volume " + path);
    char magic[4];
    std::uint32_t version = 0, side = 0, reserved = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&side), 4);
    in.read(reinterpret_cast<char*>(&reserved), 4);
    if (!in || std::memcmp(magic, kVolumeMagic, 4) != 0)
        throw IoError("volume " + path + " has a bad header");
    if (version != kVolumeVersion)
        throw IoError("volume " + path + " has version " +
                      std::to_string(version) + ", expected " +
                      std::to_string(kVolumeVersion));
    std::vector<float> voxels(static_cast<size_t>(side) * side * side);
    in.read(reinterpret_cast<char*>(voxels.data()),
            static_cast<std::streamsize>(voxels.size() * sizeof(float)));
    if (!in) throw IoError("volume " + path + " is truncated");
    if (side_out) *side_out = static_cast<int>(side);
    return voxels;
}

namespace {

std::string value_to_tsv(const FactorSpec& spec, const FactorValue& v) {
    if (v.missing) return "NA";
    switch (spec.kind) {
        case FactorKind::Numeric:
        case FactorKind::Age:
            return format_number(v.number);
        case FactorKind::Categorical:
            return v.category;
        case FactorKind::History:
            return v.flag ? "existent" : "non-existent";
        case FactorKind::Imaging:
            return "NA";
    }
    return "NA";
}

FactorValue value_from_tsv(const FactorSpec& spec, const std::string& s) {
    if (s == "NA") return FactorValue::none();
    switch (spec.kind) {
        case FactorKind::Numeric:
        case FactorKind::Age:
            return FactorValue::num(std::strtod(s.c_str(), nullptr));
        case FactorKind::Categorical:
            return FactorValue::cat(s);
        case FactorKind::History:
            return FactorValue::history(s == "existent");
        case FactorKind::Imaging:
            return FactorValue::none();
    }
    return FactorValue::none();
}

std::vector<std::string> split_tsv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string join_comma(const std::vector<std::string>& xs) {
    std::string out;
    for (const auto& x : xs) {
        if (!out.empty()) out += ",";
        out += x;
    }
    return out;
}

std::vector<std::string> split_comma(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

void save_cohort(const Cohort& cohort, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "volumes");

    json doc;
    doc["format_version"] = kCohortFormatVersion;
    doc["config"] = config_to_json(cohort.config);
    json schema = json::array();
    for (const auto& f : cohort.schema.factors)
        schema.push_back(
            {{"name", f.name}, {"kind", factor_kind_name(f.kind)}});
    doc["schema"] = std::move(schema);
    doc["splits"] = {{"train", cohort.train_idx},
                     {"val", cohort.val_idx},
                     {"test", cohort.test_idx}};
    std::ofstream meta(fs::path(dir) / "cohort.json");
    if (!meta) throw IoError("cannot write cohort metadata in " + dir);
    meta << doc.dump(2) << "\n";

    std::ofstream tsv(fs::path(dir) / "records.tsv");
    if (!tsv) throw IoError("cannot write records table in " + dir);
    tsv << "subject_id\tlabel\timaging";
    const auto non_imaging = cohort.schema.non_imaging();
    for (const auto& f : non_imaging) tsv << "\t" << f.name;
    tsv << "\n";
    for (const auto& rec : cohort.records) {
        tsv << rec.subject_id << "\t" << rec.label << "\t"
            << join_comma(rec.imaging_present);
        for (const auto& f : non_imaging) {
            auto it = rec.non_imaging.find(f.name);
            tsv << "\t"
                << value_to_tsv(f, it == rec.non_imaging.end()
                                       ? FactorValue::none()
                                       : it->second);
        }
        tsv << "\n";
        write_volume((fs::path(dir) / "volumes" / (rec.subject_id + ".vol"))
                         .string(),
                     rec.volume_side, rec.volume);
    }
}

Cohort load_cohort(const std::string& dir) {
    std::ifstream meta(fs::path(dir) / "cohort.json");
    if (!meta) throw IoError("no cohort.json in " + dir);
    json doc = json::parse(meta, nullptr, false);
    if (doc.is_discarded())
        throw IoError("cohort.json in " + dir + " is not valid JSON");
    if (doc.value("format_version", -1) != kCohortFormatVersion)
        throw IoError("cohort " + dir + " has an unsupported format version");
    Cohort cohort;
    cohort.config = config_from_json(doc.at("config"));
    for (const auto& f : doc.at("schema"))
        cohort.schema.factors.push_back(
            {f.at("name").get<std::string>(),
             factor_kind_from_name(f.at("kind").get<std::string>())});
    cohort.train_idx = doc.at("splits").at("train").get<std::vector<int>>();
    cohort.val_idx = doc.at("splits").at("val").get<std::vector<int>>();
    cohort.test_idx = doc.at("splits").at("test").get<std::vector<int>>();

    std::ifstream tsv(fs::path(dir) / "records.tsv");
    if (!tsv) throw IoError("no records.tsv in " + dir);
    std::string line;
    std::getline(tsv, line);
    const auto header = split_tsv(line);
    const auto non_imaging = cohort.schema.non_imaging();
    if (header.size() != 3 + non_imaging.size())
        throw IoError("records.tsv header does not match the schema");
    while (std::getline(tsv, line)) {
        if (line.empty()) continue;
        const auto cells = split_tsv(line);
        if (cells.size() != header.size())
            throw IoError("records.tsv row for '" + cells[0] +
                          "' has the wrong column count");
        FactorRecord rec;
        rec.subject_id = cells[0];
        rec.label = std::stoi(cells[1]);
        rec.imaging_present = split_comma(cells[2]);
        for (size_t k = 0; k < non_imaging.size(); ++k)
            rec.non_imaging[non_imaging[k].name] =
                value_from_tsv(non_imaging[k], cells[3 + k]);
        rec.volume = read_volume(
            (fs::path(dir) / "volumes" / (rec.subject_id + ".vol")).string(),
            &rec.volume_side);
        cohort.records.push_back(std::move(rec));
    }
    return cohort;
}

std::vector<double> blob_oracle_scores(const Cohort& cohort) {
    const auto& sig = cohort.config.image_signal;
    const int side = cohort.config.volume_side;
    const double radius = sig.radius_frac * side;
    const double cx = sig.center[1][0] * side, cy = sig.center[1][1] * side,
                 cz = sig.center[1][2] * side;
    std::vector<double> scores;
    for (const auto& rec : cohort.records) {
        double sum = 0.0;
        long long count = 0;
        size_t vi = 0;
        for (int x = 0; x < side; ++x)
            for (int y = 0; y < side; ++y)
                for (int z = 0; z < side; ++z, ++vi) {
                    const double dx = x - cx, dy = y - cy, dz = z - cz;
                    if (dx * dx + dy * dy + dz * dz <= radius * radius) {
                        sum += rec.volume[vi];
                        ++count;
                    }
                }
        scores.push_back(count > 0 ? sum / count : 0.0);
    }
    return scores;
}

// ---- Presets ----------------------------------------------------------------

namespace {

CohortFactorSpec numeric_factor(const std::string& name, double mean0,
                                double sd0, double mean1, double sd1,
                                int decimals = 1) {
    CohortFactorSpec f;
    f.spec = {name, FactorKind::Numeric};
    f.mean[0] = mean0;
    f.mean[1] = mean1;
    f.stddev[0] = sd0;
    f.stddev[1] = sd1;
    f.decimals = decimals;
    return f;
}

CohortFactorSpec age_factor(double mean0, double mean1) {
    CohortFactorSpec f;
    f.spec = {"Age", FactorKind::Age};
    f.mean[0] = mean0;
    f.mean[1] = mean1;
    f.stddev[0] = 6.5;
    f.stddev[1] = 7.0;
    f.decimals = 0;
    return f;
}

CohortFactorSpec gender_factor() {
    CohortFactorSpec f;
    f.spec = {"Gender", FactorKind::Categorical};
    f.categories = {"Male", "Female"};
    f.category_p[0] = {0.5, 0.5};
    f.category_p[1] = {0.5, 0.5};
    return f;
}

CohortFactorSpec history_factor(const std::string& name, double p0,
                                double p1) {
    CohortFactorSpec f;
    f.spec = {name, FactorKind::History};
    f.history_p[0] = p0;
    f.history_p[1] = p1;
    return f;
}

const std::vector<std::string> kImagingPoolA = {
    "Hippocampus", "Entorhinal Cortex", "Amygdala", "Thalamus"};
const std::vector<std::string> kImagingPoolB = {
    "Lateral Ventricle", "Cerebral Cortex", "Caudate", "Putamen"};

}  // namespace

SyntheticCohortConfig mixed_signal_config(int n, std::uint64_t seed,
                                          int volume_side) {
    SyntheticCohortConfig c;
    c.name = "mixed";
    c.n_subjects = n;
    c.seed = seed;
    c.volume_side = volume_side;
    c.image_signal.enabled = true;
    c.factors = {
        numeric_factor("MMSE score", 29.0, 1.2, 21.6, 4.7),
        numeric_factor("Vitamin B12", 500.0, 90.0, 500.0, 90.0),
        age_factor(72.9, 74.3),
        gender_factor(),
        history_factor("Smoking", 0.3, 0.35),
    };
    c.factors[1].missing_p = 0.1;  // Vitamin B12 occasionally missing
    c.imaging_pool[0] = kImagingPoolA;
    c.imaging_pool[1] = kImagingPoolA;  // shared pool: presence carries no label
    c.imaging_per_subject = 2;
    return c;
}

SyntheticCohortConfig knowledge_signal_config(int n, std::uint64_t seed,
                                              int volume_side) {
    SyntheticCohortConfig c;
    c.name = "knowledge-signal";
    c.n_subjects = n;
    c.seed = seed;
    c.volume_side = volume_side;
    c.image_signal.enabled = false;  // noise only
    // identical class distributions everywhere outside the knowledge channel
    c.factors = {
        numeric_factor("MMSE score", 27.0, 2.0, 27.0, 2.0),
        age_factor(73.0, 73.0),
        gender_factor(),
        history_factor("Smoking", 0.3, 0.3),
    };
    c.imaging_pool[0] = kImagingPoolA;
    c.imaging_pool[1] = kImagingPoolB;  // disjoint pools: knowledge-only signal
    c.imaging_per_subject = 2;
    return c;
}

SyntheticCohortConfig blob_signal_config(int n, std::uint64_t seed,
                                         int volume_side) {
    SyntheticCohortConfig c = knowledge_signal_config(n, seed, volume_side);
    c.name = "blob";
    c.image_signal.enabled = true;
    c.imaging_pool[1] = kImagingPoolA;  // shared again
    return c;
}

SyntheticCohortConfig null_signal_config(int n, std::uint64_t seed,
                                         int volume_side) {
    SyntheticCohortConfig c = knowledge_signal_config(n, seed, volume_side);
    c.name = "null";
    c.imaging_pool[1] = kImagingPoolA;  // shared: nothing separates classes
    return c;
}

SyntheticCohortConfig cohort_preset(const std::string& name, int n,
                                    std::uint64_t seed, int volume_side) {
    if (name == "mixed") return mixed_signal_config(n, seed, volume_side);
    if (name == "knowledge-signal")
        return knowledge_signal_config(n, seed, volume_side);
    if (name == "blob") return blob_signal_config(n, seed, volume_side);
    if (name == "null") return null_signal_config(n, seed, volume_side);
    throw ConfigError("unknown cohort preset '" + name +
                      "'; expected mixed, knowledge-signal, blob or null");
}

KnowledgeBank stub_bank_for(const FactorSchema& schema) {
    KnowledgeBank bank;
    StubLlmClient stub;
    for (const auto& f : schema.factors) bank.generate(f.name, stub);
    if (schema.find("MMSE score") != nullptr)
        bank.add_expert(
            "MMSE score",
            "Scores at or below education-adjusted cutoffs raise suspicion "
            "of cognitive impairment.");
    if (schema.find("Hippocampus") != nullptr)
        bank.add_expert("Hippocampus",
                        "Hippocampal atrophy is an early and reliable "
                        "structural marker of Alzheimer's disease.");
    return bank;
}

}  // namespace kmdx
