#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "specloop/errors.hpp"
#include "specloop/oracle.hpp"

namespace specloop {

struct HttpOracleConfig {
  std::string base_url;  // falls back to SPECLOOP_API_BASE
  std::string api_key;   // falls back to SPECLOOP_API_KEY
  std::string model = "gpt-4o";
  int max_retries = 3;
  int retry_delay_ms = 250;
  int timeout_s = 120;
  long long context_window = 128000;
  double temperature = -1.0;  // < 0: omit, provider default applies
};

namespace detail {

struct SplitUrl {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // leading path, may be empty
};

inline SplitUrl split_base_url(const std::string& base) {
  auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos)
    throw Error(ErrorCode::config, "API base URL needs a scheme: " + base);
  auto path_start = base.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = base;
  } else {
    out.origin = base.substr(0, path_start);
    out.path_prefix = base.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/')
      out.path_prefix.pop_back();
  }
  return out;
}

}  // namespace detail

/// Builds the chat-completion request body: model name plus the message list
/// as role/content pairs.
inline nlohmann::json chat_request_body(const Conversation& conv, const HttpOracleConfig& cfg) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : conv.messages())
    messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  nlohmann::json body = {{"model", cfg.model}, {"messages", std::move(messages)}};
  if (cfg.temperature >= 0.0) body["temperature"] = cfg.temperature;
  return body;
}

/// Extracts the assistant text and token usage from a chat-completion
/// response. Provider-reported usage wins; without it the counts fall back to
/// the estimator and the reply is marked accordingly.
inline OracleReply parse_chat_response(const nlohmann::json& response, const Conversation& conv) {
  OracleReply reply;
  try {
    reply.answer = response.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::transport,
                std::string("malformed chat completion response: ") + e.what());
  }
  if (reply.answer.empty())
    throw Error(ErrorCode::transport, "provider returned an empty answer");
  if (response.contains("usage") && response.at("usage").contains("prompt_tokens") &&
      response.at("usage").contains("completion_tokens")) {
    reply.prompt_tokens = response.at("usage").at("prompt_tokens").get<long long>();
    reply.completion_tokens = response.at("usage").at("completion_tokens").get<long long>();
    reply.source = OracleReply::Source::provider_usage;
  } else {
    reply.prompt_tokens = conv.prompt_token_sum();
    reply.completion_tokens = count_tokens(reply.answer);
    reply.source = OracleReply::Source::estimated;
  }
  return reply;
}

/// Chat-completion client for a remote oracle. Transient failures (connect
/// errors, 429, 5xx) are retried up to the configured limit before becoming a
/// transport error.
class HttpOracle : public OracleInterface {
 public:
  explicit HttpOracle(HttpOracleConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty())
      if (const char* env = std::getenv("SPECLOOP_API_BASE")) config_.base_url = env;
    if (config_.api_key.empty())
      if (const char* env = std::getenv("SPECLOOP_API_KEY")) config_.api_key = env;
    if (config_.base_url.empty())
      throw Error(ErrorCode::config, "no API base URL (set SPECLOOP_API_BASE)");
    url_ = detail::split_base_url(config_.base_url);
  }

  const HttpOracleConfig& config() const { return config_; }

  OracleReply complete(const Conversation& conv, const CallContext&) override {
    require_sendable(conv, config_.context_window);
    const std::string body = chat_request_body(conv, config_).dump();
    const std::string path = url_.path_prefix + "/chat/completions";

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry_delay_ms * attempt));
      httplib::Client client(url_.origin);
      client.set_connection_timeout(config_.timeout_s, 0);
      client.set_read_timeout(config_.timeout_s, 0);
      httplib::Headers headers;
      if (!config_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + config_.api_key);

      auto res = client.Post(path, headers, body, "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
        continue;
      }
      if (res->status != 200)
        throw Error(ErrorCode::transport,
                    "HTTP " + std::to_string(res->status) + ": " + res->body);
      nlohmann::json response;
      try {
        response = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::transport, std::string("response is not JSON: ") + e.what());
      }
      return parse_chat_response(response, conv);
    }
    throw Error(ErrorCode::transport, "giving up after " +
                                          std::to_string(config_.max_retries + 1) +
                                          " attempts; last error: " + last_error);
  }

 private:
  HttpOracleConfig config_;
  detail::SplitUrl url_;
};

}  // namespace specloop
