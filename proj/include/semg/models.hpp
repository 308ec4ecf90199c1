#pragma once
// Classical decoders over feature vectors: LDA, Gaussian naive Bayes, KNN,
// one-vs-rest linear SVM and a Gini random forest, with evaluation helpers
// and a versioned binary model format.
//
// Ties are always resolved towards the lowest class id (KNN votes first fall
// back to the smaller mean neighbour distance).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "semg/detail/parallel.hpp"
#include "semg/errors.hpp"
#include "semg/features.hpp"

namespace semg {

// Dense row-major n x d matrix of feature rows.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    explicit FeatureMatrix(std::size_t cols) : cols_(cols) {}
    FeatureMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<const double> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }
    std::span<double> row(std::size_t i) { return {values_.data() + i * cols_, cols_}; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }

    void push_back(std::span<const double> r) {
        if (r.size() != cols_) throw ArgumentError("row width mismatch");
        values_.insert(values_.end(), r.begin(), r.end());
        ++rows_;
    }
    void reserve(std::size_t rows) { values_.reserve(rows * cols_); }

    FeatureMatrix select(std::span<const std::size_t> idx) const {
        FeatureMatrix out(cols_);
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(row(i));
        return out;
    }

    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

enum class ModelKind { lda, naive_bayes, knn, linear_svm, random_forest };

inline constexpr std::array<ModelKind, 5> kAllModelKinds = {ModelKind::lda, ModelKind::naive_bayes, ModelKind::knn,
                                                             ModelKind::linear_svm, ModelKind::random_forest};

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::lda: return "LDA";
        case ModelKind::naive_bayes: return "NaiveBayes";
        case ModelKind::knn: return "KNN";
        case ModelKind::linear_svm: return "SVM";
        case ModelKind::random_forest: return "RandomForest";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
    std::string l(s);
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "lda") return ModelKind::lda;
    if (l == "naivebayes" || l == "naive_bayes" || l == "nb") return ModelKind::naive_bayes;
    if (l == "knn") return ModelKind::knn;
    if (l == "svm" || l == "linear_svm") return ModelKind::linear_svm;
    if (l == "randomforest" || l == "random_forest" || l == "rf") return ModelKind::random_forest;
    throw ArgumentError("unknown model kind '" + std::string(s) + "'");
}

struct Hyperparams {
    double lda_ridge = 1e-3;  // times trace(S)/d
    double nb_var_floor = 1e-9;
    int knn_k = 5;
    int svm_epochs = 50;
    double svm_lambda = 1e-4;
    int rf_trees = 100;
    int rf_max_depth = 16;
    int rf_min_leaf = 2;
    int rf_bins = 64;  // quantile bins per feature for split candidates
};

// Train-set z-scoring; a zero spread maps to a unit divisor.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const FeatureMatrix& x) {
        Standardizer s;
        const std::size_t d = x.cols();
        s.mean.assign(d, 0.0);
        s.scale.assign(d, 0.0);
        const auto n = static_cast<double>(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
        for (auto& m : s.mean) m /= n;
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double dv = x(i, j) - s.mean[j];
                s.scale[j] += dv * dv;
            }
        for (auto& v : s.scale) {
            v = std::sqrt(v / n);
            if (!(v > 0.0)) v = 1.0;
        }
        return s;
    }

    void apply(std::span<const double> in, std::span<double> out) const {
        for (std::size_t j = 0; j < in.size(); ++j) out[j] = (in[j] - mean[j]) / scale[j];
    }

    FeatureMatrix apply(const FeatureMatrix& x) const {
        FeatureMatrix out(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) apply(x.row(i), out.row(i));
        return out;
    }
};

struct LdaParams {
    Eigen::MatrixXd coef;       // K x d
    Eigen::VectorXd intercept;  // K
};

struct NaiveBayesParams {
    Eigen::MatrixXd mean;  // K x d
    Eigen::MatrixXd var;   // K x d
    Eigen::VectorXd log_prior;
};

struct KnnParams {
    int k = 5;
    Standardizer standardizer;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> points;  // standardized, n x d
    Eigen::VectorXd sq_norms;
    std::vector<int> class_index;  // per training row
};

struct SvmParams {
    Standardizer standardizer;
    Eigen::MatrixXd weights;  // K x (d + 1); last column multiplies a constant 1
};

struct TreeNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // go left when x[feature] <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t class_index = 0;
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct ForestParams {
    std::vector<Tree> trees;
};

struct TrainedModel {
    ModelKind kind = ModelKind::lda;
    std::vector<int> classes;  // sorted labels
    std::size_t feature_dim = 0;
    std::variant<LdaParams, NaiveBayesParams, KnnParams, SvmParams, ForestParams> params;
};

namespace detail {

// Index of the maximum; scores within a relative 1e-12 of the best count as
// tied and the lowest index wins.
inline int argmax_lowest(std::span<const double> scores) {
    double best = -std::numeric_limits<double>::infinity();
    for (double s : scores) best = std::max(best, s);
    const double tol = 1e-12 * std::max(1.0, std::fabs(best));
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i] >= best - tol) return static_cast<int>(i);
    return 0;
}

struct LabelIndex {
    std::vector<int> classes;
    std::vector<int> y;  // class index per row
    std::vector<std::size_t> counts;
};

inline LabelIndex index_labels(std::span<const int> labels) {
    LabelIndex li;
    li.classes.assign(labels.begin(), labels.end());
    std::sort(li.classes.begin(), li.classes.end());
    li.classes.erase(std::unique(li.classes.begin(), li.classes.end()), li.classes.end());
    li.counts.assign(li.classes.size(), 0);
    li.y.reserve(labels.size());
    for (int l : labels) {
        const auto k = static_cast<int>(std::lower_bound(li.classes.begin(), li.classes.end(), l) - li.classes.begin());
        li.y.push_back(k);
        ++li.counts[static_cast<std::size_t>(k)];
    }
    return li;
}

inline Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_eigen(
    const FeatureMatrix& x) {
    return {x.values().data(), static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols())};
}

// ---- LDA

inline LdaParams train_lda(const FeatureMatrix& x, const LabelIndex& li, const Hyperparams& hp) {
    const auto d = static_cast<Eigen::Index>(x.cols());
    const auto K = static_cast<Eigen::Index>(li.classes.size());
    const auto X = as_eigen(x);
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(K, d);
    for (Eigen::Index i = 0; i < X.rows(); ++i) means.row(li.y[static_cast<std::size_t>(i)]) += X.row(i);
    for (Eigen::Index k = 0; k < K; ++k) means.row(k) /= static_cast<double>(li.counts[static_cast<std::size_t>(k)]);

    Eigen::MatrixXd centered(X.rows(), d);
    for (Eigen::Index i = 0; i < X.rows(); ++i) centered.row(i) = X.row(i) - means.row(li.y[static_cast<std::size_t>(i)]);
    const double dof = std::max<double>(1.0, static_cast<double>(X.rows() - K));
    Eigen::MatrixXd cov = (centered.transpose() * centered) / dof;
    const double ridge = hp.lda_ridge * cov.trace() / static_cast<double>(d);
    if (!(ridge > 0.0) || !std::isfinite(ridge))
        throw NumericError("LDA pooled covariance is singular (zero within-class spread)");
    cov.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("LDA pooled covariance is not positive definite");

    const Eigen::MatrixXd w = llt.solve(means.transpose());  // d x K
    LdaParams p;
    p.coef = w.transpose();
    p.intercept.resize(K);
    const double n = static_cast<double>(X.rows());
    for (Eigen::Index k = 0; k < K; ++k)
        p.intercept(k) = -0.5 * means.row(k).dot(w.col(k)) +
                         std::log(static_cast<double>(li.counts[static_cast<std::size_t>(k)]) / n);
    return p;
}

// ---- Naive Bayes

inline NaiveBayesParams train_nb(const FeatureMatrix& x, const LabelIndex& li, const Hyperparams& hp) {
    const auto d = static_cast<Eigen::Index>(x.cols());
    const auto K = static_cast<Eigen::Index>(li.classes.size());
    const auto X = as_eigen(x);
    NaiveBayesParams p;
    p.mean = Eigen::MatrixXd::Zero(K, d);
    p.var = Eigen::MatrixXd::Zero(K, d);
    for (Eigen::Index i = 0; i < X.rows(); ++i) p.mean.row(li.y[static_cast<std::size_t>(i)]) += X.row(i);
    for (Eigen::Index k = 0; k < K; ++k) p.mean.row(k) /= static_cast<double>(li.counts[static_cast<std::size_t>(k)]);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const auto k = li.y[static_cast<std::size_t>(i)];
        p.var.row(k).array() += (X.row(i) - p.mean.row(k)).array().square();
    }
    p.log_prior.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double nk = static_cast<double>(li.counts[static_cast<std::size_t>(k)]);
        p.var.row(k) /= nk;
        p.var.row(k) = p.var.row(k).cwiseMax(hp.nb_var_floor);
        p.log_prior(k) = std::log(nk / static_cast<double>(X.rows()));
    }
    return p;
}

// ---- KNN

inline KnnParams train_knn(const FeatureMatrix& x, const LabelIndex& li, const Hyperparams& hp) {
    if (hp.knn_k < 1) throw ArgumentError("knn k must be >= 1");
    KnnParams p;
    p.k = hp.knn_k;
    p.standardizer = Standardizer::fit(x);
    const FeatureMatrix z = p.standardizer.apply(x);
    p.points = as_eigen(z);
    p.sq_norms = p.points.rowwise().squaredNorm();
    p.class_index = li.y;
    return p;
}

inline std::vector<int> predict_knn(const KnnParams& p, std::size_t n_classes, const FeatureMatrix& q) {
    const FeatureMatrix z = p.standardizer.apply(q);
    const auto Z = as_eigen(z);
    const auto n_train = p.points.rows();
    const auto k = static_cast<std::size_t>(std::min<Eigen::Index>(p.k, n_train));
    std::vector<int> out(q.rows());
    constexpr Eigen::Index kChunk = 64;
    Eigen::MatrixXd dist;
    std::vector<std::pair<double, Eigen::Index>> heap;
    for (Eigen::Index start = 0; start < Z.rows(); start += kChunk) {
        const Eigen::Index m = std::min(kChunk, Z.rows() - start);
        const auto block = Z.middleRows(start, m);
        dist.noalias() = -2.0 * block * p.points.transpose();
        const Eigen::VectorXd qn = block.rowwise().squaredNorm();
        for (Eigen::Index i = 0; i < m; ++i) {
            heap.clear();
            for (Eigen::Index j = 0; j < n_train; ++j) {
                const double d2 = std::max(0.0, dist(i, j) + qn(i) + p.sq_norms(j));
                if (heap.size() < k) {
                    heap.emplace_back(d2, j);
                    std::push_heap(heap.begin(), heap.end());
                } else if (std::make_pair(d2, j) < heap.front()) {
                    std::pop_heap(heap.begin(), heap.end());
                    heap.back() = {d2, j};
                    std::push_heap(heap.begin(), heap.end());
                }
            }
            std::vector<int> votes(n_classes, 0);
            std::vector<double> dsum(n_classes, 0.0);
            for (const auto& [d2, j] : heap) {
                const auto c = static_cast<std::size_t>(p.class_index[static_cast<std::size_t>(j)]);
                ++votes[c];
                dsum[c] += std::sqrt(d2);
            }
            const int top = *std::max_element(votes.begin(), votes.end());
            int best = -1;
            double best_mean = 0.0;
            for (std::size_t c = 0; c < n_classes; ++c) {
                if (votes[c] != top) continue;
                const double mean = dsum[c] / votes[c];
                if (best < 0 || mean < best_mean) best = static_cast<int>(c), best_mean = mean;
            }
            out[static_cast<std::size_t>(start + i)] = best;
        }
    }
    return out;
}

// ---- Linear SVM (one-vs-rest, Pegasos-style sub-gradient descent)

inline SvmParams train_svm(const FeatureMatrix& x, const LabelIndex& li, const Hyperparams& hp, std::uint64_t seed) {
    SvmParams p;
    p.standardizer = Standardizer::fit(x);
    const FeatureMatrix z = p.standardizer.apply(x);
    const auto n = static_cast<Eigen::Index>(x.rows());
    const auto d = static_cast<Eigen::Index>(x.cols());
    const auto K = static_cast<Eigen::Index>(li.classes.size());
    Eigen::MatrixXd aug(n, d + 1);
    aug.leftCols(d) = as_eigen(z);
    aug.col(d).setOnes();

    // One shared visiting order per epoch for all binary problems.
    std::vector<std::vector<Eigen::Index>> orders(static_cast<std::size_t>(hp.svm_epochs));
    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    for (auto& o : orders) {
        std::shuffle(perm.begin(), perm.end(), rng);
        o = perm;
    }

    p.weights.resize(K, d + 1);
    const double lambda = hp.svm_lambda;
    detail::parallel_for(static_cast<std::size_t>(K), [&](std::size_t cls) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(d + 1);
        double a = 1.0;  // w = a * v
        double t = 0.0;
        for (const auto& order : orders) {
            for (Eigen::Index i : order) {
                t += 1.0;
                const double eta = 1.0 / (lambda * t);
                const double y = li.y[static_cast<std::size_t>(i)] == static_cast<int>(cls) ? 1.0 : -1.0;
                const double margin = y * a * aug.row(i).dot(v);
                const double shrink = 1.0 - eta * lambda;
                if (shrink <= 0.0) {
                    v.setZero();
                    a = 1.0;
                } else {
                    a *= shrink;
                }
                if (margin < 1.0) v.noalias() += (eta * y / a) * aug.row(i).transpose();
                if (a < 1e-9) {
                    v *= a;
                    a = 1.0;
                }
            }
        }
        p.weights.row(static_cast<Eigen::Index>(cls)) = (a * v).transpose();
    });
    return p;
}

// ---- Random forest

class ForestTrainer {
public:
    ForestTrainer(const FeatureMatrix& x, const LabelIndex& li, const Hyperparams& hp)
        : x_(x), li_(li), hp_(hp), n_(x.rows()), d_(x.cols()), k_(li.classes.size()) {
        bin_features();
    }

    Tree grow(std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, n_ - 1);
        std::vector<std::uint32_t> idx(n_);
        for (auto& i : idx) i = static_cast<std::uint32_t>(pick(rng));
        Tree tree;
        tree.nodes.reserve(256);
        Scratch s{std::vector<std::size_t>(static_cast<std::size_t>(hp_.rf_bins) * k_),
                  std::vector<std::size_t>(d_), std::vector<std::uint32_t>(n_)};
        std::iota(s.features.begin(), s.features.end(), std::size_t{0});
        build(tree, idx, 0, idx.size(), 0, rng, s);
        return tree;
    }

private:
    struct Scratch {
        std::vector<std::size_t> hist;
        std::vector<std::size_t> features;
        std::vector<std::uint32_t> tmp;
    };

    void bin_features() {
        const auto bins = static_cast<std::size_t>(hp_.rf_bins);
        cuts_.resize(d_);
        binned_.assign(d_ * n_, 0);
        std::vector<double> col(n_);
        for (std::size_t j = 0; j < d_; ++j) {
            for (std::size_t i = 0; i < n_; ++i) col[i] = x_(i, j);
            std::vector<double> sorted = col;
            std::sort(sorted.begin(), sorted.end());
            auto& cuts = cuts_[j];
            for (std::size_t b = 1; b < bins; ++b) {
                const double v = sorted[std::min(n_ - 1, b * n_ / bins)];
                if (v < sorted.back() && (cuts.empty() || v > cuts.back())) cuts.push_back(v);
            }
            for (std::size_t i = 0; i < n_; ++i)
                binned_[j * n_ + i] = static_cast<std::uint8_t>(std::lower_bound(cuts.begin(), cuts.end(), col[i]) - cuts.begin());
        }
    }

    std::int32_t make_leaf(Tree& tree, const std::vector<std::size_t>& counts) const {
        TreeNode node;
        node.class_index = static_cast<std::int32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        tree.nodes.push_back(node);
        return static_cast<std::int32_t>(tree.nodes.size() - 1);
    }

    std::int32_t build(Tree& tree, std::vector<std::uint32_t>& idx, std::size_t lo, std::size_t hi, int depth,
                       std::mt19937_64& rng, Scratch& s) const {
        const std::size_t n = hi - lo;
        std::vector<std::size_t> counts(k_, 0);
        for (std::size_t i = lo; i < hi; ++i) ++counts[static_cast<std::size_t>(li_.y[idx[i]])];
        const auto min_leaf = static_cast<std::size_t>(std::max(1, hp_.rf_min_leaf));
        const bool pure = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) <= 1;
        if (pure || depth >= hp_.rf_max_depth || n < 2 * min_leaf) return make_leaf(tree, counts);

        double parent_score = 0.0;
        for (auto c : counts) parent_score += static_cast<double>(c) * static_cast<double>(c);
        parent_score /= static_cast<double>(n);

        const auto mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d_)))));
        double best_score = parent_score + 1e-12;
        std::size_t best_feature = d_;
        std::size_t best_bin = 0;
        std::vector<std::size_t> left(k_);
        for (std::size_t m = 0; m < mtry && m < d_; ++m) {
            std::uniform_int_distribution<std::size_t> pick(m, d_ - 1);
            std::swap(s.features[m], s.features[pick(rng)]);
            const std::size_t f = s.features[m];
            const std::size_t nb = cuts_[f].size() + 1;
            if (nb < 2) continue;
            std::fill(s.hist.begin(), s.hist.begin() + static_cast<std::ptrdiff_t>(nb * k_), 0);
            const std::uint8_t* col = binned_.data() + f * n_;
            for (std::size_t i = lo; i < hi; ++i) ++s.hist[col[idx[i]] * k_ + static_cast<std::size_t>(li_.y[idx[i]])];
            std::fill(left.begin(), left.end(), 0);
            std::size_t n_left = 0;
            for (std::size_t b = 0; b + 1 < nb; ++b) {
                for (std::size_t c = 0; c < k_; ++c) {
                    left[c] += s.hist[b * k_ + c];
                    n_left += s.hist[b * k_ + c];
                }
                const std::size_t n_right = n - n_left;
                if (n_left < min_leaf) continue;
                if (n_right < min_leaf) break;
                double sl = 0.0, sr = 0.0;
                for (std::size_t c = 0; c < k_; ++c) {
                    const auto l = static_cast<double>(left[c]);
                    const auto r = static_cast<double>(counts[c] - left[c]);
                    sl += l * l;
                    sr += r * r;
                }
                const double score = sl / static_cast<double>(n_left) + sr / static_cast<double>(n_right);
                if (score > best_score) best_score = score, best_feature = f, best_bin = b;
            }
        }
        if (best_feature == d_) return make_leaf(tree, counts);

        // Stable partition of idx[lo, hi) by bin <= best_bin.
        const std::uint8_t* col = binned_.data() + best_feature * n_;
        std::size_t mid = lo, t = 0;
        for (std::size_t i = lo; i < hi; ++i) {
            if (col[idx[i]] <= best_bin) idx[mid++] = idx[i];
            else s.tmp[t++] = idx[i];
        }
        std::copy(s.tmp.begin(), s.tmp.begin() + static_cast<std::ptrdiff_t>(t), idx.begin() + static_cast<std::ptrdiff_t>(mid));

        tree.nodes.push_back({});
        const auto self = static_cast<std::int32_t>(tree.nodes.size() - 1);
        const std::int32_t l = build(tree, idx, lo, mid, depth + 1, rng, s);
        const std::int32_t r = build(tree, idx, mid, hi, depth + 1, rng, s);
        auto& node = tree.nodes[static_cast<std::size_t>(self)];
        node.feature = static_cast<std::int32_t>(best_feature);
        node.threshold = cuts_[best_feature][best_bin];
        node.left = l;
        node.right = r;
        return self;
    }

    const FeatureMatrix& x_;
    const LabelIndex& li_;
    const Hyperparams& hp_;
    std::size_t n_, d_, k_;
    std::vector<std::vector<double>> cuts_;
    std::vector<std::uint8_t> binned_;  // feature-major
};

inline int tree_predict(const Tree& t, std::span<const double> x) {
    std::size_t i = 0;
    while (t.nodes[i].feature >= 0) {
        const auto& n = t.nodes[i];
        i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return t.nodes[i].class_index;
}

}  // namespace detail

// Derives an independent per-tree seed.
inline std::uint64_t tree_seed(std::uint64_t seed, std::size_t tree) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tree + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline TrainedModel train(ModelKind kind, const FeatureMatrix& x, std::span<const int> y, const Hyperparams& hp = {},
                          std::uint64_t seed = 0) {
    if (x.rows() != y.size()) throw ArgumentError("feature rows and labels differ in length");
    if (x.rows() == 0 || x.cols() == 0) throw DataError("empty training set");
    const auto li = detail::index_labels(y);
    for (std::size_t k = 0; k < li.classes.size(); ++k)
        if (li.counts[k] < 2)
            throw DataError("class " + std::to_string(li.classes[k]) + " has fewer than 2 training samples");
    for (double v : x.values())
        if (!std::isfinite(v)) throw DataError("non-finite feature value in training set");

    TrainedModel m;
    m.kind = kind;
    m.classes = li.classes;
    m.feature_dim = x.cols();
    switch (kind) {
        case ModelKind::lda: m.params = detail::train_lda(x, li, hp); break;
        case ModelKind::naive_bayes: m.params = detail::train_nb(x, li, hp); break;
        case ModelKind::knn: m.params = detail::train_knn(x, li, hp); break;
        case ModelKind::linear_svm: m.params = detail::train_svm(x, li, hp, seed); break;
        case ModelKind::random_forest: {
            detail::ForestTrainer trainer(x, li, hp);
            ForestParams fp;
            fp.trees.resize(static_cast<std::size_t>(hp.rf_trees));
            detail::parallel_for(fp.trees.size(), [&](std::size_t t) { fp.trees[t] = trainer.grow(tree_seed(seed, t)); });
            m.params = std::move(fp);
            break;
        }
    }
    return m;
}

// Class index (into m.classes) per row.
inline std::vector<int> predict_indices(const TrainedModel& m, const FeatureMatrix& x) {
    if (x.cols() != m.feature_dim)
        throw ArgumentError("expected " + std::to_string(m.feature_dim) + " features, got " + std::to_string(x.cols()));
    const std::size_t K = m.classes.size();
    std::vector<int> out(x.rows());
    if (x.rows() == 0) return out;
    const auto X = detail::as_eigen(x);

    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, LdaParams>) {
                const Eigen::MatrixXd scores = (X * p.coef.transpose()).rowwise() + p.intercept.transpose();
                for (Eigen::Index i = 0; i < scores.rows(); ++i) {
                    const Eigen::VectorXd r = scores.row(i).transpose();
                    out[static_cast<std::size_t>(i)] = detail::argmax_lowest({r.data(), K});
                }
            } else if constexpr (std::is_same_v<P, NaiveBayesParams>) {
                const Eigen::ArrayXXd log_norm = (2.0 * M_PI * p.var.array()).log();
                Eigen::VectorXd s(static_cast<Eigen::Index>(K));
                for (Eigen::Index i = 0; i < X.rows(); ++i) {
                    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(K); ++k) {
                        const auto diff = X.row(i).array() - p.mean.row(k).array();
                        s(k) = p.log_prior(k) - 0.5 * (log_norm.row(k) + diff.square() / p.var.row(k).array()).sum();
                    }
                    out[static_cast<std::size_t>(i)] = detail::argmax_lowest({s.data(), K});
                }
            } else if constexpr (std::is_same_v<P, KnnParams>) {
                out = detail::predict_knn(p, K, x);
            } else if constexpr (std::is_same_v<P, SvmParams>) {
                const FeatureMatrix z = p.standardizer.apply(x);
                const auto Z = detail::as_eigen(z);
                const auto d = static_cast<Eigen::Index>(m.feature_dim);
                const Eigen::MatrixXd scores =
                    (Z * p.weights.leftCols(d).transpose()).rowwise() + p.weights.col(d).transpose();
                for (Eigen::Index i = 0; i < scores.rows(); ++i) {
                    const Eigen::VectorXd r = scores.row(i).transpose();
                    out[static_cast<std::size_t>(i)] = detail::argmax_lowest({r.data(), K});
                }
            } else {
                std::vector<double> votes(K);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    std::fill(votes.begin(), votes.end(), 0.0);
                    for (const auto& t : p.trees) votes[static_cast<std::size_t>(detail::tree_predict(t, x.row(i)))] += 1.0;
                    out[i] = detail::argmax_lowest(votes);
                }
            }
        },
        m.params);
    return out;
}

inline std::vector<int> predict(const TrainedModel& m, const FeatureMatrix& x) {
    auto idx = predict_indices(m, x);
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = m.classes[static_cast<std::size_t>(idx[i])];
    return labels;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ConfusionMatrix {
    std::vector<int> classes;
    std::vector<std::vector<std::size_t>> counts;  // [true][predicted]

    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& r : counts) t += std::accumulate(r.begin(), r.end(), std::size_t{0});
        return t;
    }
    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
        return t;
    }
    std::size_t row_sum(std::size_t i) const { return std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0}); }

    std::string to_csv() const {
        std::ostringstream os;
        os << "true\\pred";
        for (int c : classes) os << ',' << c;
        os << '\n';
        for (std::size_t i = 0; i < classes.size(); ++i) {
            os << classes[i];
            for (auto v : counts[i]) os << ',' << v;
            os << '\n';
        }
        return os.str();
    }
};

struct Evaluation {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    std::vector<int> predictions;
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& classes, std::span<const int> truth,
                                        std::span<const int> predicted) {
    ConfusionMatrix cm{classes, std::vector<std::vector<std::size_t>>(classes.size(), std::vector<std::size_t>(classes.size(), 0))};
    auto index_of = [&](int label) {
        auto it = std::lower_bound(classes.begin(), classes.end(), label);
        if (it == classes.end() || *it != label)
            throw ArgumentError("label " + std::to_string(label) + " is not one of the model classes");
        return static_cast<std::size_t>(it - classes.begin());
    };
    for (std::size_t i = 0; i < truth.size(); ++i) ++cm.counts[index_of(truth[i])][index_of(predicted[i])];
    return cm;
}

inline Evaluation evaluate(const TrainedModel& m, const FeatureMatrix& x, std::span<const int> y) {
    if (x.rows() == 0) throw ArgumentError("cannot evaluate on an empty test set");
    if (x.rows() != y.size()) throw ArgumentError("feature rows and labels differ in length");
    Evaluation ev;
    ev.predictions = predict(m, x);
    ev.confusion = confusion_matrix(m.classes, y, ev.predictions);
    ev.accuracy = static_cast<double>(ev.confusion.trace()) / static_cast<double>(ev.confusion.total());
    return ev;
}

// ---------------------------------------------------------------------------
// Binary model format (little-endian):
//   "SEMGMODL" | u32 version | u32 tag_len | tag | u8 kind | u64 dim | u32 K | K x i32 classes | payload

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

class BinWriter {
public:
    explicit BinWriter(std::ostream& os) : os_(os) {}
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        os_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void put_bytes(std::string_view s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }
    void put_matrix(const Eigen::MatrixXd& m) {
        put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(m(i, j));
    }
    void put_vec(const std::vector<double>& v) {
        put<std::uint64_t>(v.size());
        for (double x : v) put(x);
    }

private:
    std::ostream& os_;
};

class BinReader {
public:
    explicit BinReader(std::istream& is) : is_(is) {}
    template <typename T>
    T get() {
        T v{};
        is_.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!is_) throw FormatError("model file truncated");
        return v;
    }
    std::string get_bytes(std::size_t n) {
        if (n > (1u << 20)) throw FormatError("implausible string length in model file");
        std::string s(n, '\0');
        is_.read(s.data(), static_cast<std::streamsize>(n));
        if (!is_) throw FormatError("model file truncated");
        return s;
    }
    std::uint64_t get_size(std::uint64_t limit = (1ull << 32)) {
        const auto n = get<std::uint64_t>();
        if (n > limit) throw FormatError("implausible size in model file");
        return n;
    }
    Eigen::MatrixXd get_matrix() {
        const auto r = get_size(), c = get_size();
        Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get<double>();
        return m;
    }
    std::vector<double> get_vec() {
        std::vector<double> v(get_size());
        for (auto& x : v) x = get<double>();
        return v;
    }

private:
    std::istream& is_;
};

}  // namespace detail

inline void save_model(const TrainedModel& m, std::ostream& os, std::string_view layout_tag = kFeatureLayoutTag) {
    static_assert(std::endian::native == std::endian::little, "model format is little-endian");
    detail::BinWriter w(os);
    w.put_bytes("SEMGMODL");
    w.put<std::uint32_t>(kModelFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layout_tag.size()));
    w.put_bytes(layout_tag);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.kind));
    w.put<std::uint64_t>(m.feature_dim);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.classes.size()));
    for (int c : m.classes) w.put<std::int32_t>(c);
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, LdaParams>) {
                w.put_matrix(p.coef);
                w.put_matrix(p.intercept);
            } else if constexpr (std::is_same_v<P, NaiveBayesParams>) {
                w.put_matrix(p.mean);
                w.put_matrix(p.var);
                w.put_matrix(p.log_prior);
            } else if constexpr (std::is_same_v<P, KnnParams>) {
                w.put<std::int32_t>(p.k);
                w.put_vec(p.standardizer.mean);
                w.put_vec(p.standardizer.scale);
                w.put_matrix(p.points);
                w.put<std::uint64_t>(p.class_index.size());
                for (int c : p.class_index) w.put<std::int32_t>(c);
            } else if constexpr (std::is_same_v<P, SvmParams>) {
                w.put_vec(p.standardizer.mean);
                w.put_vec(p.standardizer.scale);
                w.put_matrix(p.weights);
            } else {
                w.put<std::uint64_t>(p.trees.size());
                for (const auto& t : p.trees) {
                    w.put<std::uint64_t>(t.nodes.size());
                    for (const auto& n : t.nodes) {
                        w.put(n.feature);
                        w.put(n.threshold);
                        w.put(n.left);
                        w.put(n.right);
                        w.put(n.class_index);
                    }
                }
            }
        },
        m.params);
    if (!os) throw FormatError("failed to write model");
}

inline TrainedModel load_model(std::istream& is, std::string_view expected_tag = kFeatureLayoutTag) {
    detail::BinReader r(is);
    if (r.get_bytes(8) != "SEMGMODL") throw FormatError("not a model file (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kModelFormatVersion) throw FormatError("unsupported model format version " + std::to_string(version));
    const std::string tag = r.get_bytes(r.get<std::uint32_t>());
    if (tag != expected_tag) throw FormatError("feature layout mismatch: model has '" + tag + "'");
    TrainedModel m;
    const auto kind = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(ModelKind::random_forest)) throw FormatError("unknown model kind");
    m.kind = static_cast<ModelKind>(kind);
    m.feature_dim = r.get<std::uint64_t>();
    m.classes.resize(r.get<std::uint32_t>());
    for (auto& c : m.classes) c = r.get<std::int32_t>();
    switch (m.kind) {
        case ModelKind::lda: {
            LdaParams p;
            p.coef = r.get_matrix();
            p.intercept = r.get_matrix();
            m.params = std::move(p);
            break;
        }
        case ModelKind::naive_bayes: {
            NaiveBayesParams p;
            p.mean = r.get_matrix();
            p.var = r.get_matrix();
            p.log_prior = r.get_matrix();
            m.params = std::move(p);
            break;
        }
        case ModelKind::knn: {
            KnnParams p;
            p.k = r.get<std::int32_t>();
            p.standardizer.mean = r.get_vec();
            p.standardizer.scale = r.get_vec();
            p.points = r.get_matrix();
            p.sq_norms = p.points.rowwise().squaredNorm();
            p.class_index.resize(r.get_size());
            for (auto& c : p.class_index) c = r.get<std::int32_t>();
            m.params = std::move(p);
            break;
        }
        case ModelKind::linear_svm: {
            SvmParams p;
            p.standardizer.mean = r.get_vec();
            p.standardizer.scale = r.get_vec();
            p.weights = r.get_matrix();
            m.params = std::move(p);
            break;
        }
        case ModelKind::random_forest: {
            ForestParams p;
            p.trees.resize(r.get_size(1u << 20));
            for (auto& t : p.trees) {
                t.nodes.resize(r.get_size(1u << 24));
                for (auto& n : t.nodes) {
                    n.feature = r.get<std::int32_t>();
                    n.threshold = r.get<double>();
                    n.left = r.get<std::int32_t>();
                    n.right = r.get<std::int32_t>();
                    n.class_index = r.get<std::int32_t>();
                }
            }
            m.params = std::move(p);
            break;
        }
    }
    return m;
}

inline void save_model(const TrainedModel& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string());
    save_model(m, os);
}

inline TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return load_model(is);
}

}  // namespace semg
