#pragma once

#include <memory>
#include <string>
#include <vector>

namespace debiaslab {

// Minimal text-generation client. Implementations must be safe to call from
// one thread at a time; the HTTP client bounds in-flight use by itself.
class TextGenClient {
  public:
    virtual ~TextGenClient() = default;
    // Sends one prompt, returns the raw completion. Throws transport-error.
    virtual std::string complete(const std::string& prompt) = 0;
};

struct HttpClientConfig {
    std::string endpoint_url; // e.g. http://host:port/v1/chat/completions
    std::string model_name;
    std::string api_key_env = "DEBIASLAB_API_KEY";
    int timeout_seconds = 60;
    bool debug_log_bodies = false;
};

// OpenAI-style chat-completions client over the configured endpoint.
std::unique_ptr<TextGenClient> make_http_client(const HttpClientConfig& config);

// The instruction sent for paraphrase generation: the fixed template with
// {SUBJECT} substituted, followed by a newline and the sentence itself.
std::string paraphrase_prompt(const std::string& subject, const std::string& sentence);

// The template prefix alone with {SUBJECT} substituted (exposed so callers
// can verify what goes over the wire).
std::string paraphrase_instruction(const std::string& subject);

struct ParaphraseOptions {
    int max_retries = 2;
};

// Requests three paraphrases (one per line), validating that every returned
// line contains the subject; retries on violation and throws
// paraphrase-validation listing the offending outputs once retries are
// exhausted.
std::vector<std::string> generate_paraphrases(TextGenClient& client, const std::string& sentence,
                                              const std::string& subject,
                                              const ParaphraseOptions& options = {});

} // namespace debiaslab
