#include "uvet/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uvet::stats {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateError("correlation undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

// exact two-sided permutation p-value for |rho| == 1, n <= 8
double perfect_rho_permutation_p(const std::vector<double>& rx, std::vector<double> ry) {
    std::sort(ry.begin(), ry.end());
    std::size_t hits = 0, total = 0;
    do {
        ++total;
        const double r = pearson(rx, ry);
        if (std::fabs(r) >= 1.0 - 1e-12) ++hits;
    } while (std::next_permutation(ry.begin(), ry.end()));
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

SpearmanResult spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
    if (x.size() < 3) throw UsageError("spearman: need at least 3 pairs");
    const std::size_t n = x.size();

    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);

    SpearmanResult result;
    result.rho = pearson(rx, ry);

    if (std::fabs(result.rho) >= 1.0 - 1e-12) {
        result.p_value = n <= 8 ? perfect_rho_permutation_p(rx, ry) : 0.0;
        return result;
    }
    const double dof = static_cast<double>(n - 2);
    const double t = result.rho * std::sqrt(dof / (1.0 - result.rho * result.rho));
    boost::math::students_t dist(dof);
    result.p_value = 2.0 * boost::math::cdf(dist, -std::fabs(t));
    return result;
}

Alternative parse_alternative(const std::string& s) {
    if (s == "two_sided" || s == "two-sided") return Alternative::two_sided;
    if (s == "greater") return Alternative::greater;
    if (s == "less") return Alternative::less;
    throw ConfigError("unknown alternative: " + s);
}

WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample, Alternative alternative) {
    if (sample.before.size() != sample.after.size()) throw DimensionError("wilcoxon: length mismatch");
    if (sample.before.empty()) throw UsageError("wilcoxon: empty sample");

    std::vector<double> diff;
    diff.reserve(sample.before.size());
    for (std::size_t i = 0; i < sample.before.size(); ++i) {
        const double d = sample.after[i] - sample.before[i];
        if (d != 0.0) diff.push_back(d);  // zeros dropped
    }
    if (diff.empty()) throw DegenerateError("wilcoxon: all differences are zero");
    const std::size_t n = diff.size();

    std::vector<double> abs_diff(n);
    for (std::size_t i = 0; i < n; ++i) abs_diff[i] = std::fabs(diff[i]);
    const std::vector<double> ranks = average_ranks(abs_diff);

    // doubled ranks are integers even at .5 average ties
    std::vector<long> ranks2(n);
    long w2 = 0, total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ranks2[i] = std::lround(2.0 * ranks[i]);
        total2 += ranks2[i];
        if (diff[i] > 0.0) w2 += ranks2[i];
    }

    WilcoxonResult result;
    result.w = 0.5 * static_cast<double>(w2);
    result.n_used = n;

    if (n <= 20) {
        result.method = "exact";
        // subset-sum counts over the doubled ranks
        std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
        counts[0] = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t s = counts.size(); s-- > static_cast<std::size_t>(ranks2[i]);) {
                counts[s] += counts[s - static_cast<std::size_t>(ranks2[i])];
            }
        }
        const double denom = std::pow(2.0, static_cast<double>(n));
        double p_le = 0.0, p_ge = 0.0;
        for (std::size_t s = 0; s < counts.size(); ++s) {
            if (static_cast<long>(s) <= w2) p_le += counts[s];
            if (static_cast<long>(s) >= w2) p_ge += counts[s];
        }
        p_le /= denom;
        p_ge /= denom;
        switch (alternative) {
            case Alternative::greater: result.p_value = p_ge; break;
            case Alternative::less: result.p_value = p_le; break;
            case Alternative::two_sided: result.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge)); break;
        }
        return result;
    }

    result.method = "normal";
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    double tie_term = 0.0;
    std::size_t i = 0;
    std::vector<double> sorted_abs = abs_diff;
    std::sort(sorted_abs.begin(), sorted_abs.end());
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && sorted_abs[j + 1] == sorted_abs[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = (result.w - mu) / std::sqrt(var);
    const auto phi = [](double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); };
    switch (alternative) {
        case Alternative::greater: result.p_value = 1.0 - phi(z); break;
        case Alternative::less: result.p_value = phi(z); break;
        case Alternative::two_sided: result.p_value = std::min(1.0, 2.0 * std::min(phi(z), 1.0 - phi(z))); break;
    }
    return result;
}

ChairScores chair_scores(const std::vector<CaptionObjects>& captions) {
    if (captions.empty()) throw DegenerateError("chair: empty corpus");
    std::size_t hallucinated_captions = 0, total_mentioned = 0, total_hallucinated = 0;
    for (const CaptionObjects& c : captions) {
        for (const std::string& h : c.hallucinated) {
            if (!c.mentioned.count(h)) {
                throw UsageError("chair: hallucinated object '" + h + "' not among mentioned objects");
            }
        }
        if (!c.hallucinated.empty()) ++hallucinated_captions;
        total_mentioned += c.mentioned.size();
        total_hallucinated += c.hallucinated.size();
    }
    if (total_mentioned == 0) throw DegenerateError("chair: no mentioned objects");
    ChairScores s;
    s.chair_s = static_cast<double>(hallucinated_captions) / static_cast<double>(captions.size());
    s.chair_i = static_cast<double>(total_hallucinated) / static_cast<double>(total_mentioned);
    return s;
}

BinaryMetrics binary_classification_metrics(const std::vector<bool>& predictions,
                                            const std::vector<bool>& labels) {
    if (predictions.size() != labels.size()) throw DimensionError("binary metrics: length mismatch");
    if (predictions.empty()) throw UsageError("binary metrics: empty input");

    BinaryMetrics m;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] && labels[i]) ++m.tp;
        else if (predictions[i] && !labels[i]) ++m.fp;
        else if (!predictions[i] && labels[i]) ++m.fn;
        else ++m.tn;
    }
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(predictions.size());
    if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    if (m.precision && m.recall) {
        const double p = *m.precision, r = *m.recall;
        m.f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    return m;
}

BinnedReport binned_analysis(const std::vector<double>& statistic,
                             const std::vector<std::vector<double>>& metrics, std::size_t n_bins) {
    if (statistic.size() != metrics.size()) throw DimensionError("binned: statistic/metric length mismatch");
    if (n_bins == 0) throw UsageError("binned: need at least one bin");
    if (n_bins > statistic.size()) throw UsageError("binned: more bins than samples");
    const std::size_t n = statistic.size();
    const std::size_t n_metrics = metrics.empty() ? 0 : metrics.front().size();
    for (const auto& row : metrics) {
        if (row.size() != n_metrics) throw DimensionError("binned: ragged metric rows");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&statistic](std::size_t a, std::size_t b) { return statistic[a] < statistic[b]; });

    BinnedReport report;
    const bool constant = statistic[order.front()] == statistic[order.back()];
    const std::size_t bins = constant ? 1 : n_bins;
    report.collapsed = constant && n_bins > 1;

    const std::size_t base = n / bins, extra = n % bins;
    std::size_t pos = 0;
    report.edges.push_back(statistic[order.front()]);
    for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t len = base + (b < extra ? 1 : 0);
        double stat_sum = 0.0;
        std::vector<double> metric_sum(n_metrics, 0.0);
        for (std::size_t i = pos; i < pos + len; ++i) {
            const std::size_t idx = order[i];
            stat_sum += statistic[idx];
            for (std::size_t mcol = 0; mcol < n_metrics; ++mcol) metric_sum[mcol] += metrics[idx][mcol];
        }
        const double dlen = static_cast<double>(len);
        report.statistic_mean.push_back(stat_sum / dlen);
        for (double& v : metric_sum) v /= dlen;
        report.metric_means.push_back(std::move(metric_sum));
        report.counts.push_back(len);
        pos += len;
        report.edges.push_back(statistic[order[pos - 1]]);
    }
    return report;
}

}  // namespace uvet::stats
