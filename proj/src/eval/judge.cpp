#include "alm/eval/judge.hpp"

#include <cmath>
#include <cstdlib>
#include <map>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "alm/core/errors.hpp"
#include "alm/eval/metrics.hpp"

namespace alm::eval {

std::string default_rubric() {
  return "You are a careful evaluator of an audio assistant. You are given a question, a reference answer "
         "and the assistant's answer. Rate the assistant's answer from 0 to 10 for usefulness and "
         "correctness with respect to the reference. Give a one-sentence rationale, then end with a line "
         "of the form \"Score: N\".";
}

double round_half(double x) { return std::round(x * 2.0) / 2.0; }

double parse_score(const std::string& reply) {
  static const std::regex re(R"(Score:\s*\**\s*([0-9]+(?:\.[0-9]+)?))", std::regex::icase);
  std::smatch m;
  std::string last;
  for (auto it = reply.cbegin(); std::regex_search(it, reply.cend(), m, re); it = m[0].second) last = m[1].str();
  if (last.empty()) throw ScoringFailure("no 'Score: N' in judge reply");
  const double v = std::stod(last);
  if (v < 0.0 || v > 10.0) throw ScoringFailure("judge score " + last + " outside [0, 10]");
  return round_half(v);
}

JudgeVerdict MockJudge::score(const JudgeRequest& req) {
  const auto ref = tokenize(normalize_text(req.reference), WerUnit::word);
  if (ref.empty()) throw ScoringFailure("empty reference");
  std::map<std::string, int> pool;
  for (const auto& t : tokenize(normalize_text(req.answer), WerUnit::word)) ++pool[t];
  std::size_t hits = 0;
  for (const auto& t : ref) {
    auto it = pool.find(t);
    if (it != pool.end() && it->second > 0) {
      --it->second;
      ++hits;
    }
  }
  const double recall = static_cast<double>(hits) / static_cast<double>(ref.size());
  std::ostringstream why;
  why << hits << " of " << ref.size() << " reference tokens present";
  return {round_half(10.0 * recall), why.str()};
}

HttpJudge::HttpJudge(HttpJudgeConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex re(R"(^(https?)://([^/:]+)(?::([0-9]+))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, re)) throw InvalidConfig("judge endpoint '" + cfg_.endpoint + "' is not a URL");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (m[1] == "https") throw InvalidConfig("https judge endpoints need a build with OpenSSL");
#endif
  base_ = m[1].str() + "://" + m[2].str() + (m[3].matched ? ":" + m[3].str() : "");
  path_ = m[4].matched ? m[4].str() : "/";
  if (cfg_.retries < 0) throw InvalidConfig("judge retries must be >= 0");
}

HttpJudge HttpJudge::from_env() {
  auto env = [](const char* k) {
    const char* v = std::getenv(k);
    return std::string(v ? v : "");
  };
  HttpJudgeConfig cfg;
  cfg.endpoint = env("JUDGE_ENDPOINT");
  if (cfg.endpoint.empty()) throw InvalidConfig("JUDGE_ENDPOINT is not set");
  cfg.api_key = env("JUDGE_API_KEY");
  cfg.model = env("JUDGE_MODEL");
  return HttpJudge(cfg);
}

JudgeVerdict HttpJudge::score(const JudgeRequest& req) {
  nlohmann::json body = {
      {"model", cfg_.model},
      {"temperature", 0},
      {"messages",
       {{{"role", "system"}, {"content", req.rubric.empty() ? default_rubric() : req.rubric}},
        {{"role", "user"},
         {"content", "Question: " + req.question + "\nReference answer: " + req.reference +
                         "\nAssistant answer: " + req.answer}}}},
  };
  const std::string payload = body.dump();

  httplib::Client client(base_);
  client.set_connection_timeout(cfg_.timeout);
  client.set_read_timeout(cfg_.timeout);
  client.set_write_timeout(cfg_.timeout);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff * attempt);
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw ScoringFailure("judge returned HTTP " + std::to_string(res->status));
    std::string content;
    try {
      content = nlohmann::json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ScoringFailure(std::string("malformed judge reply: ") + e.what());
    }
    return {parse_score(content), content};
  }
  throw ScoringFailure("judge unreachable after " + std::to_string(cfg_.retries + 1) + " attempts (" + last_error +
                       ")");
}

JudgeVerdict judge_score(const JudgeRequest& req, JudgeClient& client) {
  JudgeVerdict v = client.score(req);
  if (!(v.score >= 0.0 && v.score <= 10.0) || round_half(v.score) != v.score) {
    throw ScoringFailure("judge score " + std::to_string(v.score) + " is not a half point in [0, 10]");
  }
  return v;
}

}  // namespace alm::eval
