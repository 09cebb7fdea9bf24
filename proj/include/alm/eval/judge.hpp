#pragma once

#include <chrono>
#include <string>

namespace alm::eval {

struct JudgeRequest {
  std::string rubric;
  std::string question;
  std::string reference;
  std::string answer;
};

struct JudgeVerdict {
  double score = 0.0;  // whole or half point in [0, 10]
  std::string rationale;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string name() const = 0;
  /// Throws ScoringFailure.
  virtual JudgeVerdict score(const JudgeRequest& req) = 0;
};

/// Rating template sent as the system message.
std::string default_rubric();

/// Rounds to the nearest half point.
double round_half(double x);

/// Reads the number following "Score:" in a judge reply. Throws
/// ScoringFailure when absent or outside [0, 10].
double parse_score(const std::string& reply);

/// Scores by reference-token recall: the fraction of normalized reference
/// tokens (with multiplicity) found in the answer, times 10, rounded to a
/// half point.
class MockJudge final : public JudgeClient {
 public:
  std::string name() const override { return "mock"; }
  JudgeVerdict score(const JudgeRequest& req) override;
};

struct HttpJudgeConfig {
  std::string endpoint;  // http(s)://host[:port]/path
  std::string api_key;
  std::string model;
  std::chrono::seconds timeout{30};
  int retries = 3;
  std::chrono::milliseconds backoff{200};
};

/// Chat-completions style client. Transport errors, 429 and 5xx responses are
/// retried; anything still failing becomes a ScoringFailure.
class HttpJudge final : public JudgeClient {
 public:
  explicit HttpJudge(HttpJudgeConfig cfg);
  /// Reads JUDGE_ENDPOINT, JUDGE_API_KEY and JUDGE_MODEL. Throws InvalidConfig
  /// when JUDGE_ENDPOINT is unset.
  static HttpJudge from_env();
  std::string name() const override { return "http"; }
  JudgeVerdict score(const JudgeRequest& req) override;

 private:
  HttpJudgeConfig cfg_;
  std::string base_;  // scheme://host:port
  std::string path_;
};

JudgeVerdict judge_score(const JudgeRequest& req, JudgeClient& client);

}  // namespace alm::eval
