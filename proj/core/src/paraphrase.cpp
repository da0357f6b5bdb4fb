#include "debiaslab/paraphrase.hpp"

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "debiaslab/error.hpp"

namespace debiaslab {

using nlohmann::json;

namespace {

const char* kParaphraseTemplate =
    "Can you help me paraphrase the following sentence. Please give me three candidate "
    "paraphrases, and put each paraphrase in one line. Make sure to keep the word {SUBJECT}.";

class HttpTextGenClient final : public TextGenClient {
  public:
    explicit HttpTextGenClient(HttpClientConfig config) : config_(std::move(config)) {
        if (config_.endpoint_url.empty()) {
            throw Error(ErrorCode::config_error, "paraphrase client endpoint_url is empty");
        }
        // split scheme://host[:port]/path
        std::string url = config_.endpoint_url;
        size_t scheme_end = url.find("://");
        if (scheme_end == std::string::npos) {
            throw Error(ErrorCode::config_error, "endpoint_url must include a scheme: " + url);
        }
        size_t host_begin = scheme_end + 3;
        size_t path_begin = url.find('/', host_begin);
        base_ = url.substr(0, path_begin == std::string::npos ? url.size() : path_begin);
        path_ = path_begin == std::string::npos ? "/v1/chat/completions" : url.substr(path_begin);
    }

    std::string complete(const std::string& prompt) override {
        json body{{"model", config_.model_name},
                  {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})}};
        httplib::Client client(base_);
        client.set_read_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (key != nullptr && key[0] != '\0') {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        std::string payload = body.dump();
        if (config_.debug_log_bodies) {
            std::cerr << "[paraphrase] request: " << payload << "\n";
        }
        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            throw Error(ErrorCode::transport_error,
                        "request to " + base_ + path_ + " failed: " +
                            httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw Error(ErrorCode::transport_error,
                        "endpoint returned status " + std::to_string(res->status));
        }
        if (config_.debug_log_bodies) {
            std::cerr << "[paraphrase] response: " << res->body << "\n";
        }
        try {
            json reply = json::parse(res->body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::transport_error,
                        std::string("malformed completion response: ") + e.what());
        }
    }

  private:
    HttpClientConfig config_;
    std::string base_;
    std::string path_;
};

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        size_t begin = line.find_first_not_of(' ');
        if (begin == std::string::npos) continue;
        lines.push_back(line.substr(begin));
    }
    return lines;
}

} // namespace

std::unique_ptr<TextGenClient> make_http_client(const HttpClientConfig& config) {
    return std::make_unique<HttpTextGenClient>(config);
}

std::string paraphrase_instruction(const std::string& subject) {
    std::string instruction = kParaphraseTemplate;
    const std::string placeholder = "{SUBJECT}";
    size_t pos = instruction.find(placeholder);
    instruction.replace(pos, placeholder.size(), subject);
    return instruction;
}

std::string paraphrase_prompt(const std::string& subject, const std::string& sentence) {
    return paraphrase_instruction(subject) + "\n" + sentence;
}

std::vector<std::string> generate_paraphrases(TextGenClient& client, const std::string& sentence,
                                              const std::string& subject,
                                              const ParaphraseOptions& options) {
    if (subject.empty()) {
        throw Error(ErrorCode::invalid_input, "paraphrase subject is empty");
    }
    const std::string prompt = paraphrase_prompt(subject, sentence);
    std::vector<std::string> last_bad;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
        std::string completion = client.complete(prompt);
        std::vector<std::string> lines = split_lines(completion);
        if (lines.size() < 3) {
            last_bad = lines;
            continue;
        }
        lines.resize(3);
        bool all_contain = true;
        for (const std::string& line : lines) {
            if (line.find(subject) == std::string::npos) {
                all_contain = false;
                break;
            }
        }
        if (all_contain) return lines;
        last_bad = lines;
    }
    std::string detail;
    for (const std::string& line : last_bad) detail += "\n  - " + line;
    throw Error(ErrorCode::paraphrase_validation,
                "paraphrases dropped subject '" + subject + "' after retries:" + detail);
}

} // namespace debiaslab
