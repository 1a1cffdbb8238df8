#include "kmdx/llm_client.hpp"

#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "kmdx/common.hpp"
#include "kmdx/rng.hpp"

namespace kmdx {

namespace {

// Pulls the factor name out of the knowledge-generation prompt; falls back
// to the whole prompt for free-form queries.
std::string extract_factor(const std::string& prompt) {
    const std::string lead = "relationship between ";
    const std::string tail = " and AD diagnosis";
    const size_t a = prompt.find(lead);
    if (a == std::string::npos) return prompt;
    const size_t start = a + lead.size();
    const size_t b = prompt.find(tail, start);
    if (b == std::string::npos) return prompt.substr(start);
    return prompt.substr(start, b - start);
}

}  // namespace

std::string StubLlmClient::complete(const std::string& prompt) {
    const std::string factor = extract_factor(prompt);
    switch (hash_tag(factor) % 3) {
        case 0:
            return factor +
                   " is a recognized diagnostic factor; abnormal values are "
                   "associated with an increased likelihood of Alzheimer's "
                   "disease.";
        case 1:
            return "Changes in " + factor +
                   " reflect disease-related processes and support the "
                   "assessment of cognitive impairment.";
        default:
            return factor +
                   " carries information about disease progression and is "
                   "considered when distinguishing normal aging from "
                   "Alzheimer's disease.";
    }
}

LlmHttpConfig LlmHttpConfig::with_env_overrides(LlmHttpConfig base) {
    if (const char* ep = std::getenv("KMDX_LLM_ENDPOINT")) base.endpoint = ep;
    if (const char* m = std::getenv("KMDX_LLM_MODEL")) base.model = m;
    return base;
}

HttpLlmClient::HttpLlmClient(LlmHttpConfig config)
    : config_(std::move(config)) {
    if (config_.endpoint.empty())
        throw ConfigError("http llm client requires an endpoint");
}

std::string HttpLlmClient::complete(const std::string& prompt) {
    // Split endpoint into host and path.
    std::string url = config_.endpoint;
    std::string scheme_host = url, path = "/";
    const size_t scheme = url.find("://");
    const size_t path_pos =
        url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_pos != std::string::npos) {
        scheme_host = url.substr(0, path_pos);
        path = url.substr(path_pos);
    }
    httplib::Client cli(scheme_host);
    cli.set_read_timeout(config_.timeout_sec, 0);
    cli.set_connection_timeout(config_.timeout_sec, 0);

    nlohmann::json body = {{"model", config_.model}, {"prompt", prompt}};
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res)
        throw IoError("llm endpoint " + config_.endpoint + " unreachable");
    if (res->status != 200)
        throw IoError("llm endpoint returned status " +
                      std::to_string(res->status));
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("text"))
        throw IoError("llm endpoint returned malformed body");
    return parsed["text"].get<std::string>();
}

std::unique_ptr<LlmClient> make_stub_client() {
    return std::make_unique<StubLlmClient>();
}

}  // namespace kmdx
