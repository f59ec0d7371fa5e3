#pragma once

// OpenAI-compatible HTTP adapters for the embedding and chat ports.
//
// Embeddings: POST {path} {"model", "input": [...]} -> {"data": [{"index",
// "embedding"}]}. Chat: POST {path} {"model", "messages", "temperature"}
// -> {"choices": [{"message": {"content"}}]}.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <future>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "lean_refactor/errors.hpp"
#include "lean_refactor/llm.hpp"
#include "lean_refactor/retrieval.hpp"

namespace lean_refactor {

struct HttpEndpoint {
  std::string base_url;     // scheme://host[:port]
  std::string path;         // e.g. /v1/embeddings
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key; empty for none
  double timeout_seconds = 120.0;
  int max_attempts = 4;
  double initial_backoff_seconds = 1.0;
  std::ptrdiff_t max_in_flight = 4;

  static HttpEndpoint from_json(const nlohmann::json& j, std::string_view default_path) {
    HttpEndpoint e;
    try {
      e.base_url = j.at("base_url").get<std::string>();
      e.path = j.value("path", std::string(default_path));
      e.model = j.at("model").get<std::string>();
      e.api_key_env = j.value("api_key_env", std::string{});
      e.timeout_seconds = j.value("timeout_seconds", e.timeout_seconds);
      e.max_attempts = j.value("max_attempts", e.max_attempts);
      e.initial_backoff_seconds = j.value("initial_backoff_seconds", e.initial_backoff_seconds);
      e.max_in_flight = j.value("max_in_flight", e.max_in_flight);
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(std::string("endpoint config: ") + ex.what());
    }
    if (j.contains("api_key")) throw ConfigError("endpoint config: secrets belong in the environment, use api_key_env");
    if (e.max_attempts < 1) throw ConfigError("endpoint config: max_attempts must be >= 1");
    if (e.max_in_flight < 1 || e.max_in_flight > 64) throw ConfigError("endpoint config: max_in_flight must be 1-64");
    return e;
  }
};

namespace detail {

class HttpJsonClient {
 public:
  explicit HttpJsonClient(HttpEndpoint ep) : ep_(std::move(ep)), slots_(ep_.max_in_flight) {
    if (!ep_.api_key_env.empty()) {
      const char* key = std::getenv(ep_.api_key_env.c_str());
      if (key == nullptr || *key == '\0') throw ConfigError("environment variable " + ep_.api_key_env + " is not set");
      api_key_ = key;
    }
  }

  const HttpEndpoint& endpoint() const noexcept { return ep_; }

  // Retries connection failures, 429 and 5xx with exponential backoff.
  nlohmann::json post(const nlohmann::json& body) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(ep_.base_url);
    const auto t = std::chrono::duration<double>(ep_.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    const std::string payload = body.dump();

    std::string last;
    double backoff = ep_.initial_backoff_seconds;
    for (int attempt = 1; attempt <= ep_.max_attempts; ++attempt) {
      auto res = client.Post(ep_.path, headers, payload, "application/json");
      if (!res) {
        last = "transport error: " + httplib::to_string(res.error());
      } else if (res->status == 429 || res->status >= 500) {
        last = "HTTP " + std::to_string(res->status);
      } else if (res->status == 401 || res->status == 403) {
        throw ConfigError("HTTP " + std::to_string(res->status) + " from " + ep_.base_url + ep_.path);
      } else if (res->status < 200 || res->status >= 300) {
        throw ProviderContractViolation("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
      } else {
        auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) throw ProviderContractViolation("response body is not JSON");
        return j;
      }
      if (attempt < ep_.max_attempts) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2;
      }
    }
    throw RetryableProviderError(ep_.base_url + ep_.path + ": " + last, ep_.max_attempts);
  }

 private:
  HttpEndpoint ep_;
  std::string api_key_;
  std::counting_semaphore<64> slots_;
};

}  // namespace detail

class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(HttpEndpoint ep, std::size_t dimension, std::size_t batch_size = 64)
      : client_(std::move(ep)), dimension_(dimension), batch_size_(std::max<std::size_t>(1, batch_size)) {
    if (dimension_ == 0) throw ConfigError("embedding dimension must be positive");
  }

  std::size_t dimension() const override { return dimension_; }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
    std::vector<std::future<std::vector<EmbeddingVector>>> parts;
    for (std::size_t start = 0; start < texts.size(); start += batch_size_) {
      const auto chunk = texts.subspan(start, std::min(batch_size_, texts.size() - start));
      parts.push_back(std::async(std::launch::async, [this, chunk] { return request(chunk); }));
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (auto& p : parts) {
      for (auto& v : p.get()) out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::vector<EmbeddingVector> request(std::span<const std::string> chunk) {
    const nlohmann::json body{{"model", client_.endpoint().model},
                              {"input", std::vector<std::string>(chunk.begin(), chunk.end())}};
    const auto j = client_.post(body);
    if (!j.contains("data") || !j["data"].is_array() || j["data"].size() != chunk.size()) {
      throw ProviderContractViolation("embedding response must carry one data entry per input");
    }
    std::vector<EmbeddingVector> out(chunk.size());
    std::vector<bool> seen(chunk.size(), false);
    for (std::size_t i = 0; i < j["data"].size(); ++i) {
      const auto& d = j["data"][i];
      const std::size_t at = d.contains("index") ? d["index"].get<std::size_t>() : i;
      if (at >= chunk.size() || seen[at]) throw ProviderContractViolation("embedding response has a bad index");
      seen[at] = true;
      try {
        out[at].values = d.at("embedding").get<std::vector<double>>();
      } catch (const nlohmann::json::exception&) {
        throw ProviderContractViolation("embedding entry lacks a numeric vector");
      }
    }
    return out;
  }

  detail::HttpJsonClient client_;
  std::size_t dimension_;
  std::size_t batch_size_;
};

class HttpChatModel : public ChatModel {
 public:
  explicit HttpChatModel(HttpEndpoint ep) : client_(std::move(ep)) {}

  std::string complete(const std::vector<ChatMessage>& messages, const SamplingParams& params) override {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    nlohmann::json body{{"model", client_.endpoint().model}, {"messages", msgs}, {"temperature", params.temperature}};
    if (params.max_tokens) body["max_tokens"] = *params.max_tokens;
    const auto j = client_.post(body);
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw ProviderContractViolation("chat response lacks choices[0].message.content");
    }
  }

 private:
  detail::HttpJsonClient client_;
};

}  // namespace lean_refactor
