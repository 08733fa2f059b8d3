#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "uvet/error.hpp"

namespace uvet::stats {

struct SpearmanResult {
    double rho = 0.0;
    double p_value = 1.0;
};

/// Spearman rank correlation with average-rank ties; two-sided p-value via
/// the t-approximation, permutation-exact at |rho| == 1 for n <= 8.
SpearmanResult spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

/// Average ranks (1-based, fractional at ties).
std::vector<double> average_ranks(const std::vector<double>& v);

struct PairedSample {
    std::vector<double> before;
    std::vector<double> after;
};

enum class Alternative { two_sided, greater, less };
Alternative parse_alternative(const std::string& s);

struct WilcoxonResult {
    double w = 0.0;           // rank sum of positive differences (after - before)
    double p_value = 1.0;
    std::string method;       // "exact" (n <= 20) or "normal"
    std::size_t n_used = 0;   // pairs remaining after dropping zero differences
};

/// Wilcoxon signed rank test on differences d = after - before; zero
/// differences dropped, |d| ranked with average ties. Exact sign-assignment
/// distribution for n <= 20, tie-corrected normal approximation above.
/// `greater` tests d > 0, `less` tests d < 0.
WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample, Alternative alternative);

struct CaptionObjects {
    std::set<std::string> mentioned;
    std::set<std::string> hallucinated;  // subset of mentioned
};

struct ChairScores {
    double chair_s = 0.0;  // captions containing a hallucinated object / captions
    double chair_i = 0.0;  // hallucinated mentions / all mentions
};

ChairScores chair_scores(const std::vector<CaptionObjects>& captions);

// precision is undefined without positive predictions, recall without
// positive labels, f1 without both; the undefined cases surface as nullopt
// rather than poisoning the defined metrics.
struct BinaryMetrics {
    double accuracy = 0.0;
    std::optional<double> precision, recall, f1;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// "yes" is the positive class.
BinaryMetrics binary_classification_metrics(const std::vector<bool>& predictions,
                                            const std::vector<bool>& labels);

struct BinnedReport {
    std::vector<double> edges;                     // n_bins + 1 statistic edges
    std::vector<double> statistic_mean;            // per bin
    std::vector<std::vector<double>> metric_means; // per bin, per metric
    std::vector<std::size_t> counts;
    bool collapsed = false;  // constant statistic folded into one bin
};

/// Equal-count (quantile) binning on the statistic; per-bin means of the
/// statistic and of each metric column.
BinnedReport binned_analysis(const std::vector<double>& statistic,
                             const std::vector<std::vector<double>>& metrics, std::size_t n_bins);

}  // namespace uvet::stats
