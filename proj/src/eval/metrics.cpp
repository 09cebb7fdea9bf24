#include "alm/eval/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "alm/core/errors.hpp"

namespace alm::eval {

std::string normalize_text(const std::string& s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c) || (c < 128 && std::ispunct(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(c < 128 ? std::tolower(c) : c);
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& s, WerUnit unit) {
  std::vector<std::string> out;
  if (unit == WerUnit::word) {
    std::istringstream is(s);
    for (std::string w; is >> w;) out.push_back(w);
    return out;
  }
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    const std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    if (!std::isspace(c)) out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

WerCounts wer_counts(const std::string& reference, const std::string& hypothesis, WerUnit unit, bool normalize) {
  const auto r = tokenize(normalize ? normalize_text(reference) : reference, unit);
  const auto h = tokenize(normalize ? normalize_text(hypothesis) : hypothesis, unit);
  if (r.empty()) throw InvalidReference("reference is empty after tokenization");
  return {edit_distance(r, h), r.size()};
}

double wer(const std::string& reference, const std::string& hypothesis, WerUnit unit, bool normalize) {
  const auto c = wer_counts(reference, hypothesis, unit, normalize);
  return static_cast<double>(c.errors) / static_cast<double>(c.ref_tokens);
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[{toks.begin() + i, toks.begin() + i + n}];
  return out;
}

}  // namespace

double bleu(std::span<const std::string> references, std::span<const std::string> hypotheses) {
  if (references.size() != hypotheses.size()) {
    throw InvalidInput("bleu: " + std::to_string(references.size()) + " references vs " +
                       std::to_string(hypotheses.size()) + " hypotheses");
  }
  if (references.empty()) throw InvalidInput("bleu: empty corpus");
  std::size_t ref_len = 0, hyp_len = 0;
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  for (std::size_t s = 0; s < references.size(); ++s) {
    const auto r = tokenize(references[s], WerUnit::word);
    const auto h = tokenize(hypotheses[s], WerUnit::word);
    if (r.empty()) throw InvalidReference("bleu: reference " + std::to_string(s) + " is empty");
    ref_len += r.size();
    hyp_len += h.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto rc = ngram_counts(r, n);
      for (const auto& [gram, count] : ngram_counts(h, n)) {
        auto it = rc.find(gram);
        if (it != rc.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (totals[n] == 0) continue;
    const double m = matches[n] > 0 ? matches[n] : kBleuEpsilon;
    log_sum += std::log(m / totals[n]);
    ++orders;
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return 100.0 * bp * std::exp(log_sum / orders);
}

double accuracy(std::span<const std::string> references, std::span<const std::string> hypotheses) {
  if (references.size() != hypotheses.size()) {
    throw InvalidInput("accuracy: " + std::to_string(references.size()) + " references vs " +
                       std::to_string(hypotheses.size()) + " hypotheses");
  }
  if (references.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    correct += normalize_text(references[i]) == normalize_text(hypotheses[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(references.size());
}

}  // namespace alm::eval
