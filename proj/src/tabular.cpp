#include "atomforest/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "atomforest/random.hpp"

namespace atomforest {

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
    out.push_back(trim(cur));
    return out;
}

std::optional<double> parse_cell(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const char* first = s.data();
    if (*first == '+') ++first;
    double v = 0.0;
    auto [p, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::vector<int> rows_where(const std::vector<int>& fold, int f, bool equal) {
    std::vector<int> out;
    for (std::size_t i = 0; i < fold.size(); ++i) {
        if ((fold[i] == f) == equal) out.push_back(static_cast<int>(i));
    }
    return out;
}

void shuffle(std::vector<std::size_t>& v, SplitMix& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

double soft(double z, double t) { return z > t ? z - t : (z < -t ? z + t : 0.0); }

Eigen::VectorXd sigmoid(const Eigen::VectorXd& m) {
    return m.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

std::vector<Attribution> attributions(const std::vector<FeatureColumn>& cols, const Eigen::VectorXd& w,
                                      const std::vector<std::string>& names) {
    std::vector<Attribution> out;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        if (w(j) == 0.0) continue;
        const auto& c = cols[static_cast<std::size_t>(j)];
        std::vector<std::string> nm{names[static_cast<std::size_t>(c.variable)]};
        if (c.partner >= 0) nm.push_back(names[static_cast<std::size_t>(c.partner)]);
        out.push_back({c.label, to_infix(c.fprime, nm), w(j)});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Attribution& a, const Attribution& b) { return std::fabs(a.weight) > std::fabs(b.weight); });
    return out;
}

std::vector<std::string> default_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < n; ++j) out.push_back("x" + std::to_string(j));
    return out;
}

}  // namespace

void TabularTask::validate() const {
    if (X.rows() == 0) throw DataError("no rows");
    if (X.rows() != y.size()) throw DataError("feature and target row counts differ");
    if (static_cast<std::size_t>(X.cols()) != names.size()) throw DataError("feature names do not match the columns");
    if (!X.allFinite() || !y.allFinite()) throw DataError("non-finite entries");
    if (folds < 2) throw DataError("need at least two folds");
    if (kind == TaskKind::classification) {
        bool zero = false, one = false;
        for (double v : y) {
            if (v == 0.0) zero = true;
            else if (v == 1.0) one = true;
            else throw DataError("class labels must be 0 or 1");
        }
        if (!zero || !one) throw DataError("all labels are identical");
    }
}

TabularTask read_csv(std::istream& in, const std::string& target, TaskKind kind) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV");
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header = split_csv(line, 1);
    auto t = std::find(header.begin(), header.end(), target);
    if (t == header.end()) throw DataError("no column named " + target);
    const std::size_t ti = static_cast<std::size_t>(t - header.begin());

    TabularTask task;
    task.target = target;
    task.kind = kind;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j != ti) task.names.push_back(header[j]);
    }
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1, dropped = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_csv(line, line_no);
        if (cells.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " fields, header has " + std::to_string(header.size()));
        }
        std::vector<double> r;
        bool ok = true;
        for (const auto& c : cells) {
            auto v = parse_cell(c);
            if (!v) {
                ok = false;
                break;
            }
            r.push_back(*v);
        }
        if (ok) rows.push_back(std::move(r));
        else ++dropped;
    }
    if (dropped) task.notes.push_back("dropped " + std::to_string(dropped) + " rows with missing or non-numeric cells");
    if (rows.empty()) throw DataError("no usable rows");
    task.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(task.names.size()));
    task.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Eigen::Index c = 0;
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (j == ti) task.y(static_cast<Eigen::Index>(i)) = rows[i][j];
            else task.X(static_cast<Eigen::Index>(i), c++) = rows[i][j];
        }
    }
    task.validate();
    return task;
}

TabularTask load_csv(const std::filesystem::path& path, const std::string& target, TaskKind kind) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return read_csv(in, target, kind);
}

// ---- expansion

Eigen::MatrixXd FeatureExpander::raw_features(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) != inputs_) throw std::invalid_argument("column count differs from fit");
    Eigen::MatrixXd Xc = X;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (!X.col(j).allFinite()) throw DataError("non-finite input");
        Xc.col(j) = X.col(j).cwiseMax(lo_(j)).cwiseMin(hi_(j));
    }
    Eigen::MatrixXd F(X.rows(), static_cast<Eigen::Index>(columns_.size()));
    for (std::size_t k = 0; k < columns_.size(); ++k) {
        const auto& c = columns_[k];
        auto col = F.col(static_cast<Eigen::Index>(k));
        if (c.partner >= 0) {
            col = Xc.col(c.variable).cwiseProduct(Xc.col(c.partner));
        } else {
            std::vector<double> x(Xc.col(c.variable).data(), Xc.col(c.variable).data() + Xc.rows());
            std::vector<double> v = evaluate(c.f, std::span<const double>(x));
            col = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        }
    }
    return F;
}

void FeatureExpander::fit(const Eigen::MatrixXd& X, const std::vector<std::string>& names_in) {
    if (X.rows() < 2) throw DataError("need at least two rows to fit the expansion");
    if (!X.allFinite()) throw DataError("non-finite input");
    std::vector<std::string> names = names_in.empty() ? default_names(static_cast<std::size_t>(X.cols())) : names_in;
    if (names.size() != static_cast<std::size_t>(X.cols())) throw std::invalid_argument("names do not match columns");
    inputs_ = static_cast<std::size_t>(X.cols());
    columns_.clear();
    notes_.clear();
    lo_ = X.colwise().minCoeff().transpose();
    hi_ = X.colwise().maxCoeff().transpose();

    const Expr x = variable(0);
    std::vector<int> kept;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const std::string& nm = names[static_cast<std::size_t>(j)];
        if (!(hi_(j) - lo_(j) > 1e-12 * std::max(1.0, std::fabs(hi_(j))))) {
            notes_.push_back(nm + ": constant column dropped");
            continue;
        }
        kept.push_back(static_cast<int>(j));
        if (!cfg_.atoms) {
            columns_.push_back({static_cast<int>(j), -1, x, constant(1.0), nm});
            continue;
        }
        BuildConfig b = cfg_.build;
        b.d_max = cfg_.d_max;
        AtomLibrary lib = AtomLibrary::build(Grid::closed(lo_(j), hi_(j), cfg_.grid_points), b);
        std::vector<std::string> one{nm};
        for (std::size_t i : lib.searchable_indices()) {
            const auto& a = lib[i];
            columns_.push_back({static_cast<int>(j), -1, a.f, a.fprime, to_infix(a.f, one)});
        }
    }
    if (cfg_.cross) {
        const Expr prod = canonicalize(variable(0) * variable(1));
        for (std::size_t a = 0; a < kept.size(); ++a) {
            for (std::size_t b = a + 1; b < kept.size(); ++b) {
                std::vector<std::string> two{names[static_cast<std::size_t>(kept[a])], names[static_cast<std::size_t>(kept[b])]};
                columns_.push_back({kept[a], kept[b], prod, variable(1), two[0] + "*" + two[1]});
            }
        }
    }

    Eigen::MatrixXd F = raw_features(X);
    std::vector<FeatureColumn> good;
    std::vector<Eigen::Index> idx;
    std::size_t non_finite = 0, flat = 0;
    for (std::size_t k = 0; k < columns_.size(); ++k) {
        auto col = F.col(static_cast<Eigen::Index>(k));
        if (!col.allFinite()) {
            ++non_finite;
            continue;
        }
        double m = col.mean();
        double sd = std::sqrt((col.array() - m).square().mean());
        if (!(sd > 1e-12 * std::max(1.0, std::fabs(m)))) {
            ++flat;
            continue;
        }
        good.push_back(columns_[k]);
        idx.push_back(static_cast<Eigen::Index>(k));
    }
    if (non_finite) notes_.push_back(std::to_string(non_finite) + " features non-finite on the data, dropped");
    if (flat) notes_.push_back(std::to_string(flat) + " constant features dropped");
    columns_ = std::move(good);
    if (columns_.empty()) throw DataError("expansion produced no usable features");
    Eigen::MatrixXd G = F(Eigen::all, idx);
    mean_ = G.colwise().mean().transpose();
    scale_.resize(G.cols());
    for (Eigen::Index k = 0; k < G.cols(); ++k) scale_(k) = std::sqrt((G.col(k).array() - mean_(k)).square().mean());
    fmin_ = G.colwise().minCoeff().transpose();
    fmax_ = G.colwise().maxCoeff().transpose();
}

Eigen::MatrixXd FeatureExpander::transform(const Eigen::MatrixXd& X) const {
    if (columns_.empty()) throw std::logic_error("transform before fit");
    Eigen::MatrixXd F = raw_features(X);
    for (Eigen::Index k = 0; k < F.cols(); ++k) {
        // A pole between training points can still be hit by new rows.
        auto col = F.col(k);
        for (Eigen::Index i = 0; i < col.size(); ++i) {
            double v = col(i);
            if (!std::isfinite(v)) v = 0.5 * (fmin_(k) + fmax_(k));
            col(i) = (std::clamp(v, fmin_(k), fmax_(k)) - mean_(k)) / scale_(k);
        }
    }
    return F;
}

Eigen::MatrixXd FeatureExpander::fit_transform(const Eigen::MatrixXd& X, const std::vector<std::string>& names) {
    fit(X, names);
    return transform(X);
}

// ---- folds

std::vector<int> kfold_assignment(std::size_t rows, int folds, std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("need at least two folds");
    if (rows < static_cast<std::size_t>(folds)) throw DataError("fewer rows than folds");
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix rng(seed);
    shuffle(perm, rng);
    std::vector<int> out(rows);
    for (std::size_t t = 0; t < rows; ++t) out[perm[t]] = static_cast<int>(t % static_cast<std::size_t>(folds));
    return out;
}

std::vector<int> stratified_assignment(const Eigen::VectorXd& labels, int folds, std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("need at least two folds");
    if (labels.size() < folds) throw DataError("fewer rows than folds");
    std::vector<std::size_t> zeros, ones;
    for (Eigen::Index i = 0; i < labels.size(); ++i) (labels(i) == 1.0 ? ones : zeros).push_back(static_cast<std::size_t>(i));
    SplitMix rng(seed);
    shuffle(zeros, rng);
    shuffle(ones, rng);
    std::vector<int> out(static_cast<std::size_t>(labels.size()));
    std::size_t t = 0;
    for (auto* group : {&zeros, &ones}) {
        for (std::size_t i : *group) out[i] = static_cast<int>(t++ % static_cast<std::size_t>(folds));
    }
    return out;
}

// ---- lasso

Eigen::VectorXd LassoFit::predict(const Eigen::MatrixXd& X) const {
    return (X * coef).array() + intercept;
}

std::size_t LassoFit::nonzero() const {
    return static_cast<std::size_t>((coef.array() != 0.0).count());
}

double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const double n = static_cast<double>(X.rows());
    Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
    Eigen::VectorXd yc = y.array() - y.mean();
    return X.cols() ? (Xc.transpose() * yc).cwiseAbs().maxCoeff() / n : 0.0;
}

LassoFit fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda, const LassoConfig& cfg,
                   const Eigen::VectorXd* start) {
    if (X.rows() != y.size()) throw std::invalid_argument("lasso: row counts differ");
    if (X.rows() == 0) throw std::invalid_argument("lasso: no rows");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lasso: lambda must be non-negative");
    const Eigen::Index n = X.rows(), p = X.cols();
    const double dn = static_cast<double>(n);
    Eigen::RowVectorXd xm = X.colwise().mean();
    Eigen::MatrixXd Xc = X.rowwise() - xm;
    const double ym = y.mean();
    Eigen::VectorXd yc = y.array() - ym;
    Eigen::VectorXd nrm = Xc.colwise().squaredNorm().transpose() / dn;

    LassoFit fit;
    fit.lambda = lambda;
    fit.coef = start && start->size() == p ? *start : Eigen::VectorXd::Zero(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (nrm(j) == 0.0) fit.coef(j) = 0.0;
    }
    Eigen::VectorXd& w = fit.coef;
    Eigen::VectorXd r = yc - Xc * w;
    const double yscale = yc.squaredNorm() / dn;

    auto objective = [&] { return 0.5 * r.squaredNorm() / dn + lambda * w.lpNorm<1>(); };
    auto gap = [&] {
        Eigen::VectorXd xr = Xc.transpose() * r;
        double dual = p ? xr.cwiseAbs().maxCoeff() : 0.0;
        double alpha = lambda * dn, r2 = r.squaredNorm(), g, k;
        if (dual > alpha) {
            k = alpha / dual;
            g = 0.5 * (r2 + r2 * k * k);
        } else {
            k = 1.0;
            g = r2;
        }
        g += alpha * w.lpNorm<1>() - k * r.dot(yc);
        return g / dn;
    };
    auto update = [&](Eigen::Index j) {
        if (nrm(j) == 0.0) return 0.0;
        double old = w(j);
        double rho = Xc.col(j).dot(r) / dn + nrm(j) * old;
        double now = soft(rho, lambda) / nrm(j);
        if (now != old) {
            r.noalias() -= (now - old) * Xc.col(j);
            w(j) = now;
        }
        return std::fabs(now - old) * std::sqrt(nrm(j));
    };

    if (yscale == 0.0) {
        w.setZero();
        fit.converged = true;
        fit.intercept = ym;
        fit.objective.push_back(0.0);
        return fit;
    }
    const double inner_tol = std::sqrt(cfg.tol * yscale);
    while (fit.sweeps < cfg.max_sweeps) {
        for (Eigen::Index j = 0; j < p; ++j) update(j);
        ++fit.sweeps;
        fit.objective.push_back(objective());
        fit.duality_gap = gap();
        if (fit.duality_gap <= cfg.tol * yscale) {
            fit.converged = true;
            break;
        }
        std::vector<Eigen::Index> active;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (w(j) != 0.0) active.push_back(j);
        }
        while (!active.empty() && fit.sweeps < cfg.max_sweeps) {
            double delta = 0.0;
            for (Eigen::Index j : active) delta = std::max(delta, update(j));
            ++fit.sweeps;
            fit.objective.push_back(objective());
            if (delta <= inner_tol) break;
        }
    }
    if (!fit.converged) {
        fit.warning = "no convergence after " + std::to_string(fit.sweeps) + " sweeps, duality gap " +
                      format_double(fit.duality_gap);
    }
    fit.intercept = ym - xm.dot(w);
    return fit;
}

LassoFit fit_sparse_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LassoConfig& cfg) {
    if (cfg.lambda) return fit_lasso(X, y, *cfg.lambda, cfg);
    if (cfg.n_lambda < 1) throw std::invalid_argument("n_lambda must be positive");
    if (!(cfg.lambda_min_ratio > 0.0 && cfg.lambda_min_ratio < 1.0)) {
        throw std::invalid_argument("lambda_min_ratio must lie in (0, 1)");
    }
    const double top = lambda_max(X, y);
    if (top == 0.0) return fit_lasso(X, y, 0.0, cfg);
    std::vector<double> ladder(static_cast<std::size_t>(cfg.n_lambda));
    for (int k = 0; k < cfg.n_lambda; ++k) {
        double t = cfg.n_lambda == 1 ? 0.0 : static_cast<double>(k) / (cfg.n_lambda - 1);
        ladder[static_cast<std::size_t>(k)] = top * std::pow(cfg.lambda_min_ratio, t);
    }

    std::vector<int> fold = kfold_assignment(static_cast<std::size_t>(X.rows()), cfg.cv_folds, cfg.seed);
    std::vector<double> err(ladder.size(), 0.0);
    for (int f = 0; f < cfg.cv_folds; ++f) {
        auto tr = rows_where(fold, f, false), te = rows_where(fold, f, true);
        Eigen::MatrixXd Xtr = X(tr, Eigen::all), Xte = X(te, Eigen::all);
        Eigen::VectorXd ytr = y(tr), yte = y(te);
        Eigen::VectorXd warm = Eigen::VectorXd::Zero(X.cols());
        for (std::size_t k = 0; k < ladder.size(); ++k) {
            LassoFit fk = fit_lasso(Xtr, ytr, ladder[k], cfg, &warm);
            warm = fk.coef;
            err[k] += (fk.predict(Xte) - yte).squaredNorm();
        }
    }
    for (double& e : err) e /= static_cast<double>(X.rows());
    std::size_t best = static_cast<std::size_t>(std::min_element(err.begin(), err.end()) - err.begin());

    Eigen::VectorXd warm = Eigen::VectorXd::Zero(X.cols());
    LassoFit out;
    for (std::size_t k = 0; k <= best; ++k) {
        out = fit_lasso(X, y, ladder[k], cfg, &warm);
        warm = out.coef;
    }
    out.lambdas = ladder;
    out.cv_mse = err;
    return out;
}

// ---- logistic

Eigen::VectorXd LogisticModel::probability(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd m = (X * w).array() + b;
    return sigmoid(m);
}

double LogisticModel::accuracy(const Eigen::MatrixXd& X, const Eigen::VectorXd& labels) const {
    Eigen::VectorXd p = probability(X);
    Eigen::Index hit = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) hit += ((p(i) >= 0.5) == (labels(i) == 1.0));
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

LogisticModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& labels, const LogisticConfig& cfg) {
    if (X.rows() != labels.size() || X.rows() == 0) throw std::invalid_argument("logistic: bad shapes");
    if (!(cfg.strength >= 0.0)) throw std::invalid_argument("logistic: strength must be non-negative");
    bool zero = false, one = false;
    for (double v : labels) {
        if (v == 0.0) zero = true;
        else if (v == 1.0) one = true;
        else throw DataError("class labels must be 0 or 1");
    }
    if (!zero || !one) throw DataError("all labels are identical");
    const Eigen::Index p = X.cols();
    const double n = static_cast<double>(X.rows());
    const bool l2 = cfg.penalty == Penalty::l2;

    // Lipschitz constant of the mean log loss: largest eigenvalue of [X 1]^T [X 1] / 4n.
    Eigen::VectorXd vw = Eigen::VectorXd::Ones(p);
    double vb = 1.0, eig = 0.0;
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd u = (X * vw).array() + vb;
        Eigen::VectorXd nw = X.transpose() * u;
        double nb = u.sum();
        double norm = std::sqrt(nw.squaredNorm() + nb * nb);
        if (norm == 0.0) break;
        eig = norm / std::sqrt(vw.squaredNorm() + vb * vb);
        vw = nw / norm;
        vb = nb / norm;
    }
    const double L = 0.25 * eig / n * 1.01 + (l2 ? cfg.strength : 0.0);
    const double step = 1.0 / L;

    LogisticModel m;
    m.w = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd yw = m.w, prev_w = m.w;
    double yb = 0.0, prev_b = 0.0;
    double t = 1.0;
    for (m.iterations = 1; m.iterations <= cfg.max_iter; ++m.iterations) {
        Eigen::VectorXd g = sigmoid((X * yw).array() + yb) - labels;
        Eigen::VectorXd gw = X.transpose() * g / n;
        if (l2) gw += cfg.strength * yw;
        double gb = g.mean();
        Eigen::VectorXd nw = yw - step * gw;
        if (!l2) nw = nw.unaryExpr([&](double v) { return soft(v, step * cfg.strength); });
        double nb = yb - step * gb;
        // Restart the momentum when it points uphill.
        if ((yw - nw).dot(nw - prev_w) + (yb - nb) * (nb - prev_b) > 0.0) t = 1.0;
        double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        double beta = (t - 1.0) / tn;
        double change = std::max((nw - prev_w).cwiseAbs().maxCoeff(), std::fabs(nb - prev_b));
        double size = std::max({1.0, nw.cwiseAbs().maxCoeff(), std::fabs(nb)});
        yw = nw + beta * (nw - prev_w);
        yb = nb + beta * (nb - prev_b);
        prev_w = nw;
        prev_b = nb;
        t = tn;
        if (change <= cfg.tol * size) {
            m.converged = true;
            break;
        }
    }
    m.iterations = std::min(m.iterations, cfg.max_iter);
    m.w = prev_w;
    m.b = prev_b;
    return m;
}

// ---- cross-validation

double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
    if (pred.size() != truth.size() || truth.size() == 0) throw std::invalid_argument("r_squared: bad sizes");
    double sst = (truth.array() - truth.mean()).square().sum();
    if (sst == 0.0) throw DataError("r_squared: constant truth");
    return 1.0 - (pred - truth).squaredNorm() / sst;
}

CvReport cross_validate_regression(const TabularTask& task, const ExpandConfig& expand, const LassoConfig& cfg,
                                   std::uint64_t seed) {
    task.validate();
    CvReport rep;
    std::vector<int> fold = kfold_assignment(static_cast<std::size_t>(task.X.rows()), task.folds, seed);
    for (int f = 0; f < task.folds; ++f) {
        auto tr = rows_where(fold, f, false), te = rows_where(fold, f, true);
        FeatureExpander ex(expand);
        Eigen::MatrixXd Ftr = ex.fit_transform(task.X(tr, Eigen::all), task.names);
        Eigen::MatrixXd Fte = ex.transform(task.X(te, Eigen::all));
        LassoFit fit = fit_sparse_linear(Ftr, task.y(tr), cfg);
        if (!fit.warning.empty()) rep.warnings.push_back("fold " + std::to_string(f) + ": " + fit.warning);
        rep.fold_scores.push_back(r_squared(fit.predict(Fte), task.y(te)));
    }
    rep.mean_score = std::accumulate(rep.fold_scores.begin(), rep.fold_scores.end(), 0.0) /
                     static_cast<double>(rep.fold_scores.size());
    FeatureExpander ex(expand);
    Eigen::MatrixXd F = ex.fit_transform(task.X, task.names);
    LassoFit fit = fit_sparse_linear(F, task.y, cfg);
    rep.width = ex.width();
    rep.selected = attributions(ex.columns(), fit.coef, task.names);
    for (const auto& n : ex.notes()) rep.warnings.push_back(n);
    return rep;
}

CvReport cross_validate_classification(const TabularTask& task, const ExpandConfig& expand,
                                       const LogisticConfig& cfg, std::uint64_t seed) {
    task.validate();
    if (task.kind != TaskKind::classification) throw DataError("not a classification task");
    CvReport rep;
    std::vector<int> fold = stratified_assignment(task.y, task.folds, seed);
    for (int f = 0; f < task.folds; ++f) {
        auto tr = rows_where(fold, f, false), te = rows_where(fold, f, true);
        Eigen::VectorXd ytr = task.y(tr);
        if (ytr.minCoeff() == ytr.maxCoeff()) {
            rep.warnings.push_back("fold " + std::to_string(f) + " skipped: training rows hold a single class");
            continue;
        }
        FeatureExpander ex(expand);
        Eigen::MatrixXd Ftr = ex.fit_transform(task.X(tr, Eigen::all), task.names);
        Eigen::MatrixXd Fte = ex.transform(task.X(te, Eigen::all));
        LogisticModel m = fit_logistic(Ftr, ytr, cfg);
        if (!m.converged) rep.warnings.push_back("fold " + std::to_string(f) + ": logistic fit did not converge");
        rep.fold_scores.push_back(m.accuracy(Fte, task.y(te)));
    }
    if (rep.fold_scores.empty()) throw DataError("every fold was skipped");
    rep.mean_score = std::accumulate(rep.fold_scores.begin(), rep.fold_scores.end(), 0.0) /
                     static_cast<double>(rep.fold_scores.size());
    FeatureExpander ex(expand);
    Eigen::MatrixXd F = ex.fit_transform(task.X, task.names);
    LogisticModel m = fit_logistic(F, task.y, cfg);
    rep.width = ex.width();
    rep.selected = attributions(ex.columns(), m.w, task.names);
    for (const auto& n : ex.notes()) rep.warnings.push_back(n);
    return rep;
}

// ---- synthetic data

TabularTask synthetic_regression(std::size_t rows, double noise, std::uint64_t seed) {
    SplitMix rng(seed);
    TabularTask t;
    t.names = {"x0", "x1", "x2"};
    t.target = "y";
    t.X.resize(static_cast<Eigen::Index>(rows), 3);
    t.y.resize(static_cast<Eigen::Index>(rows));
    for (Eigen::Index i = 0; i < t.X.rows(); ++i) {
        double x0 = rng.uniform(0.0, 3.0), x1 = rng.uniform(-3.0, 3.0), x2 = rng.uniform(-2.0, 2.0);
        t.X.row(i) << x0, x1, x2;
        t.y(i) = 3.0 * std::exp(-x0) + 2.0 * std::sin(x1) + 0.5 * x2 * x2 + noise * rng.normal();
    }
    return t;
}

TabularTask hill_classification(std::size_t rows, std::uint64_t seed) {
    auto hill = [](double x, double k, double n) { return std::pow(x, n) / (std::pow(k, n) + std::pow(x, n)); };
    SplitMix rng(seed);
    TabularTask t;
    t.names = {"x0", "x1", "x2", "x3"};
    t.target = "label";
    t.kind = TaskKind::classification;
    t.X.resize(static_cast<Eigen::Index>(rows), 4);
    t.y.resize(static_cast<Eigen::Index>(rows));
    for (Eigen::Index i = 0; i < t.X.rows(); ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) t.X(i, j) = rng.uniform(0.0, 4.0);
        double s = hill(t.X(i, 0), 1.5, 4.0) + hill(t.X(i, 1), 2.0, 3.0) + 0.05 * rng.normal();
        t.y(i) = s > 1.0 ? 1.0 : 0.0;
    }
    return t;
}

TabularTask separable_clusters(std::size_t rows, std::uint64_t seed) {
    SplitMix rng(seed);
    TabularTask t;
    t.names = {"x0", "x1"};
    t.target = "label";
    t.kind = TaskKind::classification;
    t.X.resize(static_cast<Eigen::Index>(rows), 2);
    t.y.resize(static_cast<Eigen::Index>(rows));
    for (Eigen::Index i = 0; i < t.X.rows(); ++i) {
        double c = (i % 2) ? 2.0 : -2.0;
        t.X.row(i) << c + 0.5 * rng.normal(), c + 0.5 * rng.normal();
        t.y(i) = (i % 2) ? 1.0 : 0.0;
    }
    return t;
}

}  // namespace atomforest
