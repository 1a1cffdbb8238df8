#pragma once

#include <memory>
#include <string>

namespace kmdx {

// Single-call text interface: prompt in, completion out. The trained system
// never talks to a model directly; knowledge generation happens offline
// through this seam.
class LlmClient {
 public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
    virtual std::string model_tag() const = 0;
};

// Deterministic offline stub: the completion is a pure function of the
// prompt, so tests and cohorts are reproducible without network access.
class StubLlmClient : public LlmClient {
 public:
    std::string complete(const std::string& prompt) override;
    std::string model_tag() const override { return "stub"; }
};

struct LlmHttpConfig {
    std::string endpoint;  // e.g. http://host:port/v1/complete
    std::string model;
    int timeout_sec = 30;

    // Environment overrides: KMDX_LLM_ENDPOINT, KMDX_LLM_MODEL.
    static LlmHttpConfig with_env_overrides(LlmHttpConfig base);
};

// Generic HTTP-backed client. POSTs {"model":..., "prompt":...} as JSON and
// expects {"text": ...} back.
class HttpLlmClient : public LlmClient {
 public:
    explicit HttpLlmClient(LlmHttpConfig config);
    std::string complete(const std::string& prompt) override;
    std::string model_tag() const override { return config_.model; }

 private:
    LlmHttpConfig config_;
};

std::unique_ptr<LlmClient> make_stub_client();

}  // namespace kmdx
