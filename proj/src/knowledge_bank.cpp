#include "kmdx/knowledge_bank.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kmdx/common.hpp"
#include "kmdx/log.hpp"

namespace kmdx {

namespace {

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

std::string knowledge_prompt(const std::string& factor) {
    return "Please describe the relationship between " + factor +
           " and AD diagnosis.";
}

bool KnowledgeBank::has(const std::string& factor) const {
    return entries_.count(factor) > 0;
}

const KnowledgeEntry* KnowledgeBank::find(const std::string& factor) const {
    auto it = entries_.find(factor);
    return it == entries_.end() ? nullptr : &it->second;
}

const KnowledgeEntry& KnowledgeBank::generate(const std::string& factor,
                                              LlmClient& client) {
    auto it = entries_.find(factor);
    if (it != entries_.end() && !it->second.llm_text.empty())
        return it->second;  // cached
    KnowledgeEntry& e = entries_[factor];
    e.factor_name = factor;
    if (e.created_at.empty()) e.created_at = now_iso8601();
    try {
        e.llm_text = client.complete(knowledge_prompt(factor));
        e.source_model = client.model_tag();
    } catch (const std::exception& ex) {
        log_warn("knowledge generation for '" + factor +
                 "' failed: " + ex.what());
        e.llm_text.clear();
        if (e.expert_text.empty())
            log_warn("entry '" + factor +
                     "' has neither llm nor expert text yet");
    }
    return e;
}

void KnowledgeBank::add_expert(const std::string& factor,
                               const std::string& text) {
    if (text.empty())
        throw InputError("expert text for '" + factor + "' is empty");
    KnowledgeEntry& e = entries_[factor];
    e.factor_name = factor;
    e.expert_text = text;
    if (e.created_at.empty()) e.created_at = now_iso8601();
}

std::string KnowledgeBank::render_factor(const std::string& factor) const {
    const KnowledgeEntry* e = find(factor);
    if (e == nullptr || (e->expert_text.empty() && e->llm_text.empty())) {
        log_warn("no knowledge for factor '" + factor +
                 "', rendering sentinel");
        return factor + " knowledge is unavailable.";
    }
    if (e->expert_text.empty()) return e->llm_text;
    if (e->llm_text.empty()) return e->expert_text;
    return e->expert_text + " " + e->llm_text;  // expert precedes llm
}

std::string KnowledgeBank::render(
    const std::vector<std::string>& factors_present) const {
    std::string out;
    for (const std::string& f : factors_present) {
        if (!out.empty()) out += " ";
        out += render_factor(f);
    }
    return out;
}

void KnowledgeBank::persist(const std::string& path) const {
    nlohmann::json doc;
    doc["format_version"] = kBankFormatVersion;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [name, e] : entries_) {
        list.push_back({{"factor_name", e.factor_name},
                        {"llm_text", e.llm_text},
                        {"expert_text", e.expert_text},
                        {"source_model", e.source_model},
                        {"created_at", e.created_at}});
    }
    doc["entries"] = std::move(list);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write knowledge bank to " + path);
    out << doc.dump(2) << "\n";
}

KnowledgeBank KnowledgeBank::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read knowledge bank from " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded())
        throw IoError("knowledge bank " + path + " is not valid JSON");
    const int version = doc.value("format_version", -1);
    if (version != kBankFormatVersion)
        throw IoError("knowledge bank " + path + " has format_version " +
                      std::to_string(version) + ", expected " +
                      std::to_string(kBankFormatVersion) +
                      "; migrate explicitly");
    KnowledgeBank bank;
    for (const auto& item : doc.at("entries")) {
        KnowledgeEntry e;
        e.factor_name = item.at("factor_name").get<std::string>();
        e.llm_text = item.value("llm_text", "");
        e.expert_text = item.value("expert_text", "");
        e.source_model = item.value("source_model", "");
        e.created_at = item.value("created_at", "");
        if (e.llm_text.empty() && e.expert_text.empty())
            throw IoError("knowledge entry '" + e.factor_name +
                          "' has neither llm nor expert text");
        bank.entries_[e.factor_name] = std::move(e);
    }
    return bank;
}

// ---- Schema / records ------------------------------------------------------

std::string factor_kind_name(FactorKind k) {
    switch (k) {
        case FactorKind::Numeric: return "numeric";
        case FactorKind::Age: return "age";
        case FactorKind::Categorical: return "categorical";
        case FactorKind::History: return "history";
        case FactorKind::Imaging: return "imaging";
    }
    return "numeric";
}

FactorKind factor_kind_from_name(const std::string& s) {
    if (s == "numeric") return FactorKind::Numeric;
    if (s == "age") return FactorKind::Age;
    if (s == "categorical") return FactorKind::Categorical;
    if (s == "history") return FactorKind::History;
    if (s == "imaging") return FactorKind::Imaging;
    throw ConfigError("unknown factor kind '" + s + "'");
}

const FactorSpec* FactorSchema::find(const std::string& name) const {
    for (const auto& f : factors)
        if (f.name == name) return &f;
    return nullptr;
}

std::vector<FactorSpec> FactorSchema::non_imaging() const {
    std::vector<FactorSpec> out;
    for (const auto& f : factors)
        if (f.kind != FactorKind::Imaging) out.push_back(f);
    return out;
}

std::string format_number(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

namespace {

std::string sentence_for(const FactorSpec& spec, const FactorValue& v,
                         const std::string& subject_id) {
    if (v.missing) return spec.name + " is unknown.";
    switch (spec.kind) {
        case FactorKind::Numeric:
            return "The " + spec.name + " is " + format_number(v.number) + ".";
        case FactorKind::Age:
            return spec.name + " is " + format_number(v.number) +
                   " years old.";
        case FactorKind::Categorical:
            if (v.category.empty())
                throw InputError("subject " + subject_id + " factor '" +
                                 spec.name + "': categorical value missing");
            return spec.name + " is " + v.category + ".";
        case FactorKind::History:
            return spec.name + " history is " +
                   (v.flag ? "existent." : "non-existent.");
        case FactorKind::Imaging:
            throw InputError("subject " + subject_id + " factor '" +
                             spec.name +
                             "': imaging factors carry no sentence");
    }
    return {};
}

bool contains(const std::vector<std::string>& xs, const std::string& x) {
    return std::find(xs.begin(), xs.end(), x) != xs.end();
}

}  // namespace

std::string textualize(const FactorRecord& record,
                       const FactorSchema& schema) {
    return textualize_masked(record, schema, {});
}

std::string textualize_masked(const FactorRecord& record,
                              const FactorSchema& schema,
                              const std::vector<std::string>& masked) {
    std::string out;
    for (const FactorSpec& spec : schema.factors) {
        if (spec.kind == FactorKind::Imaging) continue;
        auto it = record.non_imaging.find(spec.name);
        FactorValue v =
            it == record.non_imaging.end() ? FactorValue::none() : it->second;
        if (contains(masked, spec.name)) v = FactorValue::none();
        if (!out.empty()) out += " ";
        out += sentence_for(spec, v, record.subject_id);
    }
    return out;
}

std::vector<std::string> factors_present(
    const FactorRecord& record, const FactorSchema& schema,
    const std::vector<std::string>& masked) {
    std::vector<std::string> out;
    for (const FactorSpec& spec : schema.factors) {
        if (contains(masked, spec.name)) continue;
        if (spec.kind == FactorKind::Imaging) {
            if (contains(record.imaging_present, spec.name))
                out.push_back(spec.name);
        } else {
            auto it = record.non_imaging.find(spec.name);
            if (it != record.non_imaging.end() && !it->second.missing)
                out.push_back(spec.name);
        }
    }
    return out;
}

}  // namespace kmdx
