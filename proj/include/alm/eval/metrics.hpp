#pragma once

#include <span>
#include <string>
#include <vector>

namespace alm::eval {

enum class WerUnit { word, character };

/// Lowercases, replaces ASCII punctuation with spaces and collapses whitespace.
std::string normalize_text(const std::string& s);

/// Tokens by unit: whitespace-separated words, or UTF-8 code points with
/// whitespace removed.
std::vector<std::string> tokenize(const std::string& s, WerUnit unit);

/// Levenshtein distance with unit substitution, insertion and deletion costs.
std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp);

struct WerCounts {
  std::size_t errors = 0;     // S + D + I
  std::size_t ref_tokens = 0;  // N
};
WerCounts wer_counts(const std::string& reference, const std::string& hypothesis, WerUnit unit = WerUnit::word,
                     bool normalize = true);
/// (S + D + I) / N. Throws InvalidReference when the reference has no tokens.
double wer(const std::string& reference, const std::string& hypothesis, WerUnit unit = WerUnit::word,
           bool normalize = true);

/// Smoothing floor for zero n-gram match counts.
inline constexpr double kBleuEpsilon = 0.1;

/// Corpus BLEU in [0, 100]: n-grams 1-4, uniform weights, exponential
/// brevity penalty. An order with zero matches uses kBleuEpsilon matches; an
/// order with no hypothesis n-grams at all is left out of the geometric mean.
/// Throws InvalidInput on length mismatch or an empty corpus.
double bleu(std::span<const std::string> references, std::span<const std::string> hypotheses);

/// Exact-match fraction after normalize_text. Throws InvalidInput on length mismatch.
double accuracy(std::span<const std::string> references, std::span<const std::string> hypotheses);

}  // namespace alm::eval
