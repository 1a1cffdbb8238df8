#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kmdx/llm_client.hpp"

namespace kmdx {

inline constexpr int kBankFormatVersion = 1;

// Byte-exact prompt template used for factor knowledge generation.
std::string knowledge_prompt(const std::string& factor);

struct KnowledgeEntry {
    std::string factor_name;
    std::string llm_text;     // may be empty when expert_text exists
    std::string expert_text;  // optional
    std::string source_model;
    std::string created_at;   // ISO-8601, informational only

    bool operator==(const KnowledgeEntry&) const = default;
};

class KnowledgeBank {
 public:
    bool has(const std::string& factor) const;
    const KnowledgeEntry* find(const std::string& factor) const;
    size_t size() const { return entries_.size(); }
    const std::map<std::string, KnowledgeEntry>& entries() const {
        return entries_;
    }

    // Queries the client unless a cached llm_text already exists. A client
    // failure still creates/keeps the entry (with the error logged) so an
    // expert_text can carry it.
    const KnowledgeEntry& generate(const std::string& factor,
                                   LlmClient& client);
    void add_expert(const std::string& factor, const std::string& text);

    // Rendered text for one factor: expert text first, then llm text.
    std::string render_factor(const std::string& factor) const;
    // x_K text over the given factors, in the given order. Factors without
    // an entry render the unknown-knowledge sentinel sentence (logged).
    std::string render(const std::vector<std::string>& factors_present) const;

    void persist(const std::string& path) const;
    static KnowledgeBank load(const std::string& path);

    bool operator==(const KnowledgeBank&) const = default;

 private:
    std::map<std::string, KnowledgeEntry> entries_;
};

// ---- Factor schema and subject records ------------------------------------

enum class FactorKind { Numeric, Age, Categorical, History, Imaging };

std::string factor_kind_name(FactorKind k);
FactorKind factor_kind_from_name(const std::string& s);

struct FactorSpec {
    std::string name;
    FactorKind kind = FactorKind::Numeric;

    bool operator==(const FactorSpec&) const = default;
};

// Ordered declaration of every factor; textualization and knowledge
// rendering both follow this order.
struct FactorSchema {
    std::vector<FactorSpec> factors;

    const FactorSpec* find(const std::string& name) const;
    std::vector<FactorSpec> non_imaging() const;

    bool operator==(const FactorSchema&) const = default;
};

struct FactorValue {
    bool missing = true;
    double number = 0.0;      // Numeric / Age
    std::string category;     // Categorical
    bool flag = false;        // History

    static FactorValue none() { return {}; }
    static FactorValue num(double v) { return {false, v, "", false}; }
    static FactorValue cat(std::string v) {
        return {false, 0.0, std::move(v), false};
    }
    static FactorValue history(bool v) { return {false, 0.0, "", v}; }

    bool operator==(const FactorValue&) const = default;
};

struct FactorRecord {
    std::string subject_id;
    std::vector<float> volume;  // side^3 voxels in [0,1], row-major
    int volume_side = 0;
    // Non-imaging factor values keyed by schema name (missing entries are
    // explicit). Imaging factors are listed by presence only.
    std::map<std::string, FactorValue> non_imaging;
    std::vector<std::string> imaging_present;
    int label = 0;
};

// Shortest %g-style rendering ("29", "1.9", "528.594").
std::string format_number(double v);

// One declared sentence per non-imaging schema factor, joined by single
// spaces. Missing values render "{factor} is unknown."
std::string textualize(const FactorRecord& record, const FactorSchema& schema);

// Factors of this record that carry knowledge: present imaging factors plus
// non-missing non-imaging factors, in schema order. An optional mask drops
// factors (explainability masking).
std::vector<std::string> factors_present(
    const FactorRecord& record, const FactorSchema& schema,
    const std::vector<std::string>& masked = {});

// Masked textualization: factors in `masked` render as unknown.
std::string textualize_masked(const FactorRecord& record,
                              const FactorSchema& schema,
                              const std::vector<std::string>& masked);

}  // namespace kmdx
