#include "atomforest/search.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace atomforest {

void SearchConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("invalid search config: ") + what);
    };
    need(eps > 0 && det_min > 0 && coef_cap > 0 && exact_mse > 0, "thresholds must be positive");
    need(keep >= 1 && beam_seed >= 1 && beam_keep >= 1, "keep and beam sizes must be at least 1");
    need(k_max >= 1 && k_max <= 8, "k_max must be in 1..8");
    need(workers >= 1, "workers must be at least 1");
}

std::string_view verification_name(Verification v) {
    switch (v) {
        case Verification::unverified: return "unverified";
        case Verification::verified: return "verified";
        case Verification::refuted: return "refuted";
    }
    return "?";
}

// ---------------------------------------------------------------------------

GramCache::GramCache(const AtomLibrary& lib, std::span<const double> y, Channel channel,
                     std::size_t materialize_limit)
    : channel_(channel), columns_(lib.searchable_indices()) {
    const std::size_t n = lib.samples().rows();
    if (y.size() != n) {
        throw std::invalid_argument("target has " + std::to_string(y.size()) + " values but the library has " +
                                    std::to_string(n) + " samples");
    }
    y_.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(y[i])) throw std::invalid_argument("target is not finite at sample " + std::to_string(i));
        y_[static_cast<Eigen::Index>(i)] = y[i];
    }
    const auto m = static_cast<Eigen::Index>(columns_.size());
    D_.resize(static_cast<Eigen::Index>(n), m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& a = lib[columns_[static_cast<std::size_t>(j)]];
        const auto& src = channel == Channel::derivative ? a.dvalues : a.values;
        for (std::size_t i = 0; i < n; ++i) D_(static_cast<Eigen::Index>(i), j) = src[i];
    }
    d_ = D_.transpose() * y_;
    diag_ = D_.colwise().squaredNorm().transpose();
    yy_ = y_.squaredNorm();
    if (columns_.size() <= materialize_limit) {
        G_.setZero(m, m);
        G_.selfadjointView<Eigen::Lower>().rankUpdate(D_.transpose());
        G_ = G_.selfadjointView<Eigen::Lower>();
        diag_ = G_.diagonal();
    }
}

Eigen::MatrixXd GramCache::rows(std::size_t first, std::size_t count) const {
    const auto f = static_cast<Eigen::Index>(first), c = static_cast<Eigen::Index>(count);
    if (materialized()) return G_.middleRows(f, c);
    return D_.middleCols(f, c).transpose() * D_;
}

Eigen::MatrixXd GramCache::rows(const std::vector<std::size_t>& cols) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(cols.size()), D_.cols());
    for (std::size_t r = 0; r < cols.size(); ++r) {
        const auto c = static_cast<Eigen::Index>(cols[r]);
        if (materialized()) {
            out.row(static_cast<Eigen::Index>(r)) = G_.row(c);
        } else {
            out.row(static_cast<Eigen::Index>(r)) = (D_.col(c).transpose() * D_);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr int k_max_width = 8;

struct Cand {
    double mse = 0.0;
    int k = 0;
    std::array<std::uint32_t, k_max_width> col{};
    std::array<double, k_max_width> coef{};
};

bool cols_less(const Cand& a, const Cand& b) {
    return std::lexicographical_compare(a.col.begin(), a.col.begin() + a.k, b.col.begin(), b.col.begin() + b.k);
}

bool cols_equal(const Cand& a, const Cand& b) {
    return a.k == b.k && std::equal(a.col.begin(), a.col.begin() + a.k, b.col.begin());
}

bool rank_less(const Cand& a, const Cand& b) {
    if (a.mse != b.mse) return a.mse < b.mse;
    return cols_less(a, b);
}

// Keeps the best `keep` distinct column sets seen so far.
class Collector {
public:
    explicit Collector(std::size_t keep) : keep_(keep) {}

    double threshold() const { return full_ ? worst_ : std::numeric_limits<double>::infinity(); }

    void add(const Cand& c) {
        if (full_ && c.mse > worst_) return;
        items_.push_back(c);
        if (items_.size() >= 4 * keep_ + 64) prune();
    }

    std::vector<Cand> finish() {
        prune();
        std::sort(items_.begin(), items_.end(), rank_less);
        return std::move(items_);
    }

    void merge(Collector&& other) {
        for (const auto& c : other.items_) add(c);
    }

private:
    void prune() {
        // One entry per column set, the lowest MSE copy.
        std::sort(items_.begin(), items_.end(), [](const Cand& a, const Cand& b) {
            if (!cols_equal(a, b)) return cols_less(a, b);
            return a.mse < b.mse;
        });
        items_.erase(std::unique(items_.begin(), items_.end(), cols_equal), items_.end());
        if (items_.size() > keep_) {
            std::nth_element(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(keep_ - 1), items_.end(),
                             rank_less);
            items_.resize(keep_);
        }
        if (items_.size() == keep_) {
            full_ = true;
            worst_ = std::max_element(items_.begin(), items_.end(), rank_less)->mse;
        }
    }

    std::size_t keep_;
    std::vector<Cand> items_;
    bool full_ = false;
    double worst_ = std::numeric_limits<double>::infinity();
};

template <class Fn>
void parallel_for(std::size_t tasks, int workers, Fn&& fn) {
    if (workers <= 1 || tasks <= 1) {
        for (std::size_t t = 0; t < tasks; ++t) fn(t, 0);
        return;
    }
    const auto w = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(workers), tasks));
    std::vector<std::thread> pool;
    for (std::size_t id = 0; id < w; ++id) {
        pool.emplace_back([&, id] {
            for (std::size_t t = id; t < tasks; t += w) fn(t, id);
        });
    }
    for (auto& th : pool) th.join();
}

SearchResult to_result(const Cand& c, const GramCache& cache) {
    SearchResult r;
    for (int t = 0; t < c.k; ++t) {
        r.indices.push_back(cache.atom(c.col[static_cast<std::size_t>(t)]));
        r.coefficients.push_back(c.coef[static_cast<std::size_t>(t)]);
    }
    r.gram_mse = c.mse;
    refit(r, cache);
    return r;
}

std::vector<SearchResult> finalize(std::vector<Cand> cands, const GramCache& cache) {
    std::vector<SearchResult> out;
    out.reserve(cands.size());
    for (const auto& c : cands) out.push_back(to_result(c, cache));
    std::stable_sort(out.begin(), out.end(), [](const SearchResult& a, const SearchResult& b) {
        if (a.mse != b.mse) return a.mse < b.mse;
        return a.indices < b.indices;
    });
    return out;
}

std::size_t column_of(const GramCache& cache, std::size_t atom) {
    const auto& cols = cache.columns();
    auto it = std::lower_bound(cols.begin(), cols.end(), atom);
    if (it == cols.end() || *it != atom) throw std::out_of_range("atom " + std::to_string(atom) + " is not searchable");
    return static_cast<std::size_t>(it - cols.begin());
}

Number snap_coefficient(double c) {
    if (std::isfinite(c)) {
        for (std::int64_t q = 1; q <= 12; ++q) {
            double p = std::round(c * static_cast<double>(q));
            if (std::fabs(p) > 1e15) break;
            if (std::fabs(c - p / static_cast<double>(q)) <= 1e-9 * std::max(1.0, std::fabs(c))) {
                return Number(Rational(static_cast<std::int64_t>(p), q));
            }
        }
    }
    return Number::from_double(c);
}

}  // namespace

void refit(SearchResult& r, const GramCache& cache) {
    const auto n = static_cast<Eigen::Index>(cache.n());
    const auto k = static_cast<Eigen::Index>(r.indices.size());
    if (k == 0) {
        r.mse = cache.y_norm_sq() / static_cast<double>(n);
        return;
    }
    Eigen::MatrixXd A(n, k);
    for (Eigen::Index t = 0; t < k; ++t) A.col(t) = cache.D().col(static_cast<Eigen::Index>(column_of(cache, r.indices[static_cast<std::size_t>(t)])));
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(cache.y());
    Eigen::VectorXd res = A * c - cache.y();
    double mse = res.squaredNorm() / static_cast<double>(n);
    if (c.allFinite() && std::isfinite(mse)) {
        r.coefficients.assign(c.data(), c.data() + k);
        r.mse = mse;
    } else {
        Eigen::VectorXd c0 = Eigen::Map<const Eigen::VectorXd>(r.coefficients.data(), k);
        r.mse = (A * c0 - cache.y()).squaredNorm() / static_cast<double>(n);
    }
}

std::vector<SearchResult> scan_k1(const GramCache& cache, const SearchConfig& cfg) {
    cfg.validate();
    const double n = static_cast<double>(cache.n());
    Collector keep(cfg.keep);
    const auto& d = cache.d();
    const auto& g = cache.diag();
    for (std::size_t j = 0; j < cache.m(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        if (!(g[jj] > cfg.eps)) continue;
        double c = d[jj] / g[jj];
        double mse = (cache.y_norm_sq() - d[jj] * d[jj] / g[jj]) / n;
        if (!std::isfinite(c) || !std::isfinite(mse) || std::fabs(c) > cfg.coef_cap) continue;
        Cand cand;
        cand.mse = mse;
        cand.k = 1;
        cand.col[0] = static_cast<std::uint32_t>(j);
        cand.coef[0] = c;
        keep.add(cand);
    }
    return finalize(keep.finish(), cache);
}

namespace {

std::vector<Cand> k2_candidates(const GramCache& cache, const SearchConfig& cfg, std::size_t keep_n) {
    const std::size_t m = cache.m();
    const double n = static_cast<double>(cache.n());
    const double yy = cache.y_norm_sq();
    constexpr std::size_t block = 64;
    const std::size_t blocks = (m + block - 1) / block;
    const int w = std::max(1, cfg.workers);
    std::vector<Collector> local(static_cast<std::size_t>(w), Collector(keep_n));
    const Eigen::ArrayXd d = cache.d().array();
    const Eigen::ArrayXd g = cache.diag().array();
    const double inf = std::numeric_limits<double>::infinity();

    parallel_for(blocks, w, [&](std::size_t b, std::size_t id) {
        const std::size_t i0 = b * block;
        const std::size_t cnt = std::min(block, m - i0);
        Eigen::MatrixXd rows = cache.rows(i0, cnt);
        Collector& out = local[id];
        for (std::size_t r = 0; r < cnt; ++r) {
            const std::size_t i = i0 + r;
            if (i + 1 >= m) continue;
            const auto start = static_cast<Eigen::Index>(i + 1);
            const auto len = static_cast<Eigen::Index>(m - i - 1);
            const double gii = g[static_cast<Eigen::Index>(i)];
            const double di = d[static_cast<Eigen::Index>(i)];
            auto gij = rows.row(static_cast<Eigen::Index>(r)).segment(start, len).array().transpose();
            auto gjj = g.segment(start, len);
            auto dj = d.segment(start, len);
            Eigen::ArrayXd det = gii * gjj - gij * gij;
            Eigen::ArrayXd ci = (di * gjj - dj * gij) / det;
            Eigen::ArrayXd cj = (dj * gii - di * gij) / det;
            Eigen::ArrayXd mse = (yy - ci * di - cj * dj) / n;
            Eigen::ArrayXd ok = ((det.abs() > cfg.det_min) && (ci.abs() <= cfg.coef_cap) &&
                                 (cj.abs() <= cfg.coef_cap) && (mse.abs() < inf))
                                    .cast<double>();
            Eigen::ArrayXd masked = (ok > 0.5).select(mse, inf);
            const double thr = out.threshold();
            for (Eigen::Index t = 0; t < len; ++t) {
                if (masked[t] > thr || masked[t] == inf) continue;
                Cand c;
                c.mse = masked[t];
                c.k = 2;
                c.col[0] = static_cast<std::uint32_t>(i);
                c.col[1] = static_cast<std::uint32_t>(i + 1 + static_cast<std::size_t>(t));
                c.coef[0] = ci[t];
                c.coef[1] = cj[t];
                out.add(c);
            }
        }
    });
    Collector all(keep_n);
    for (auto& c : local) all.merge(std::move(c));
    return all.finish();
}

}  // namespace

std::vector<SearchResult> scan_k2(const GramCache& cache, const SearchConfig& cfg) {
    cfg.validate();
    return finalize(k2_candidates(cache, cfg, cfg.keep), cache);
}

std::vector<SearchResult> beam(const GramCache& cache, int k, const SearchConfig& cfg,
                               const std::vector<SearchResult>* previous) {
    cfg.validate();
    if (k < 3 || k > k_max_width) throw std::invalid_argument("beam width must be in 3..8");
    std::vector<SearchResult> prev_store;
    if (!previous) {
        SearchConfig base = cfg;
        base.keep = std::max(cfg.keep, cfg.beam_seed);
        prev_store = k == 3 ? scan_k2(cache, base) : beam(cache, k - 1, base);
        previous = &prev_store;
    }
    const std::size_t m = cache.m();
    const double n = static_cast<double>(cache.n());
    const double yy = cache.y_norm_sq();
    const std::size_t seeds = std::min(cfg.beam_seed, previous->size());
    const int w = std::max(1, cfg.workers);
    std::vector<Collector> local(static_cast<std::size_t>(w), Collector(cfg.beam_keep));
    const Eigen::ArrayXd g = cache.diag().array();
    const Eigen::VectorXd& dvec = cache.d();
    const double inf = std::numeric_limits<double>::infinity();

    parallel_for(seeds, w, [&](std::size_t s, std::size_t id) {
        const SearchResult& seed = (*previous)[s];
        if (static_cast<int>(seed.k()) != k - 1) return;
        std::vector<std::size_t> cols;
        for (std::size_t a : seed.indices) cols.push_back(column_of(cache, a));
        const auto km1 = static_cast<Eigen::Index>(cols.size());
        Eigen::MatrixXd B = cache.rows(cols);  // (k-1) x m
        Eigen::MatrixXd A(km1, km1);
        Eigen::VectorXd dS(km1);
        for (Eigen::Index r = 0; r < km1; ++r) {
            dS[r] = dvec[static_cast<Eigen::Index>(cols[static_cast<std::size_t>(r)])];
            for (Eigen::Index c = 0; c < km1; ++c) A(r, c) = B(r, static_cast<Eigen::Index>(cols[static_cast<std::size_t>(c)]));
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
        const double detA = lu.determinant();
        if (!(std::fabs(detA) > 0.0) || !std::isfinite(detA)) return;
        Eigen::VectorXd a = lu.solve(dS);
        Eigen::MatrixXd W = lu.solve(B);  // (k-1) x m
        const double base = dS.dot(a);
        Eigen::ArrayXd schur = g - (B.array() * W.array()).colwise().sum().transpose();
        Eigen::ArrayXd t = dvec.array() - (B.transpose() * a).array();
        Eigen::ArrayXd cj = t / schur;
        Eigen::ArrayXd mse = (yy - base - t * cj) / n;
        Eigen::ArrayXd det = detA * schur;
        Collector& out = local[id];
        for (std::size_t j = 0; j < m; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            if (std::find(cols.begin(), cols.end(), j) != cols.end()) continue;
            if (!(std::fabs(det[jj]) > cfg.det_min) || !std::isfinite(mse[jj]) || mse[jj] == inf) continue;
            if (!(std::fabs(cj[jj]) <= cfg.coef_cap) || mse[jj] > out.threshold()) continue;
            Eigen::VectorXd cS = a - W.col(jj) * cj[jj];
            if (!cS.allFinite() || cS.cwiseAbs().maxCoeff() > cfg.coef_cap) continue;
            // Sorted column tuple with matching coefficients.
            std::array<std::pair<std::uint32_t, double>, k_max_width> tmp{};
            for (Eigen::Index r = 0; r < km1; ++r) {
                tmp[static_cast<std::size_t>(r)] = {static_cast<std::uint32_t>(cols[static_cast<std::size_t>(r)]), cS[r]};
            }
            tmp[static_cast<std::size_t>(km1)] = {static_cast<std::uint32_t>(j), cj[jj]};
            std::sort(tmp.begin(), tmp.begin() + km1 + 1);
            Cand c;
            c.mse = mse[jj];
            c.k = k;
            for (int q = 0; q < k; ++q) {
                c.col[static_cast<std::size_t>(q)] = tmp[static_cast<std::size_t>(q)].first;
                c.coef[static_cast<std::size_t>(q)] = tmp[static_cast<std::size_t>(q)].second;
            }
            out.add(c);
        }
    });
    Collector all(cfg.beam_keep);
    for (auto& c : local) all.merge(std::move(c));
    return finalize(all.finish(), cache);
}

std::vector<std::vector<SearchResult>> search(const GramCache& cache, const SearchConfig& cfg) {
    cfg.validate();
    std::vector<std::vector<SearchResult>> by_k;
    by_k.push_back(scan_k1(cache, cfg));
    if (cfg.k_max >= 2) {
        SearchConfig c2 = cfg;
        if (cfg.k_max >= 3) c2.keep = std::max(cfg.keep, cfg.beam_seed);
        by_k.push_back(scan_k2(cache, c2));
    }
    for (int k = 3; k <= cfg.k_max; ++k) by_k.push_back(beam(cache, k, cfg, &by_k.back()));
    if (by_k.size() >= 2 && by_k[1].size() > cfg.keep) by_k[1].resize(cfg.keep);
    return by_k;
}

const SearchResult* best_result(const std::vector<std::vector<SearchResult>>& by_k, double exact_mse) {
    for (const auto& list : by_k) {
        if (!list.empty() && list.front().mse < exact_mse) return &list.front();
    }
    const SearchResult* best = nullptr;
    for (const auto& list : by_k) {
        if (list.empty()) continue;
        const SearchResult& r = list.front();
        if (!best || r.mse < best->mse) best = &r;
    }
    return best;
}

std::pair<Expr, Expr> reconstruct(const SearchResult& r, const AtomLibrary& lib) {
    if (r.indices.size() != r.coefficients.size()) throw std::invalid_argument("indices and coefficients differ in length");
    std::vector<Expr> f, fp;
    for (std::size_t t = 0; t < r.indices.size(); ++t) {
        if (r.indices[t] >= lib.size()) throw std::out_of_range("atom index " + std::to_string(r.indices[t]) + " out of range");
        const auto& a = lib[r.indices[t]];
        Expr c = constant(snap_coefficient(r.coefficients[t]));
        f.push_back(c * a.f);
        fp.push_back(c * a.fprime);
    }
    return {canonicalize(add(std::move(f))), canonicalize(add(std::move(fp)))};
}

std::pair<Expr, Expr> reconstruct(SearchResult& r, const AtomLibrary& lib) {
    auto out = reconstruct(static_cast<const SearchResult&>(r), lib);
    r.antiderivative = out.first;
    r.derivative_expr = out.second;
    return out;
}

Verification verify(SearchResult& r, const AtomLibrary& lib, const Samples& holdout, const Target& target,
                    const SearchConfig& cfg, Channel channel) {
    if (!(r.mse < cfg.exact_mse)) {
        throw std::logic_error("verify needs a near-exact result (mse " + format_double(r.mse) + " is not below " +
                               format_double(cfg.exact_mse) + ")");
    }
    reconstruct(r, lib);
    const Expr& formula = channel == Channel::derivative ? r.derivative_expr : r.antiderivative;
    std::vector<double> got = evaluate(formula, holdout);
    std::vector<double> want = std::holds_alternative<Expr>(target) ? evaluate(std::get<Expr>(target), holdout)
                                                                   : std::get<std::vector<double>>(target);
    if (want.size() != got.size()) throw std::invalid_argument("holdout target length differs from holdout samples");
    double sum = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (!std::isfinite(got[i]) || !std::isfinite(want[i])) {
            r.verified = Verification::refuted;
            r.holdout_mse = std::numeric_limits<double>::infinity();
            r.note = "non-finite on holdout sample " + std::to_string(i);
            return r.verified;
        }
        double e = got[i] - want[i];
        sum += e * e;
    }
    r.holdout_mse = sum / static_cast<double>(got.size());
    r.verified = r.holdout_mse < cfg.exact_mse ? Verification::verified : Verification::refuted;
    if (r.verified == Verification::refuted) r.note = "holdout mse " + format_double(r.holdout_mse);
    return r.verified;
}

}  // namespace atomforest
