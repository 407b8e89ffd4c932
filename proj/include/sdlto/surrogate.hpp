#ifndef SDLTO_SURROGATE_HPP_
#define SDLTO_SURROGATE_HPP_

// Learned design -> gradient map and the local sampling around the recent
// design history it is trained on.
//
//   envelope       componentwise min/max over the last w+1 designs
//   draw_samples   Gaussian draws around the envelope midpoint, clipped to [0,1]
//   GradientNet    fully connected tanh network, standardized in and out
//   should_relearn cosine distance between the current design and the design
//                  at the last learning step, compared against lambda*

#include "errors.hpp"
#include "grid_fem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace sdlto {

//-----------------------------------------------------------------------------
class LookbackBuffer
{
public:
    explicit LookbackBuffer (int window = 5): window_{window}
    {
        if (window < 0) throw std::invalid_argument("lookback window must be >= 0");
    }

    // Appends the newest design, dropping the oldest beyond w+1 entries.
    void push (Vector design)
    {
        if (!designs_.empty() && designs_.front().size() != design.size()) {
            throw std::invalid_argument("design length changed within a lookback buffer");
        }
        designs_.push_back(std::move(design));
        while (int(designs_.size()) > window_ + 1) designs_.pop_front();
    }

    [[nodiscard]] int window () const noexcept { return window_; }
    [[nodiscard]] int size () const noexcept { return int(designs_.size()); }
    [[nodiscard]] bool empty () const noexcept { return designs_.empty(); }
    [[nodiscard]] bool full () const noexcept { return size() == window_ + 1; }

    // Oldest first.
    [[nodiscard]] std::deque<Vector> const& designs () const noexcept { return designs_; }

private:
    int window_;
    std::deque<Vector> designs_;
};

struct Envelope
{
    Vector lower;
    Vector upper;

    [[nodiscard]] Vector midpoint () const { return lower + 0.5 * (upper - lower); }
};

[[nodiscard]] inline Envelope envelope (LookbackBuffer const& buffer)
{
    if (buffer.empty()) throw std::invalid_argument("envelope of an empty lookback buffer");
    auto const& ds = buffer.designs();
    Envelope env{ds.front(), ds.front()};
    for (auto const& d : ds) {
        env.lower = env.lower.cwiseMin(d);
        env.upper = env.upper.cwiseMax(d);
    }
    return env;
}


//-----------------------------------------------------------------------------
struct SamplerConfig
{
    double sigma = 0.05;
    int n_samples = 64;
    std::uint64_t seed = 0;

    void validate () const
    {
        if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
        if (n_samples < 1) throw std::invalid_argument("sample count must be >= 1");
    }
};

// `stream` selects an independent substream of the configured seed, so
// successive learning steps draw different but reproducible samples.
[[nodiscard]] inline std::vector<Vector>
draw_samples (Envelope const& env, SamplerConfig const& cfg, std::uint64_t stream = 0)
{
    cfg.validate();
    if (env.lower.size() != env.upper.size()) {
        throw std::invalid_argument("envelope bounds differ in length");
    }
    Vector const mid = env.midpoint();
    std::seed_seq seq{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32),
                      std::uint32_t(stream), std::uint32_t(stream >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vector> out;
    out.reserve(std::size_t(cfg.n_samples));
    for (int s = 0; s < cfg.n_samples; ++s) {
        Vector x(mid.size());
        for (Eigen::Index i = 0; i < mid.size(); ++i) {
            x[i] = std::clamp(mid[i] + cfg.sigma * normal(rng), 0.0, 1.0);
        }
        out.push_back(std::move(x));
    }
    return out;
}


//-----------------------------------------------------------------------------
[[nodiscard]] inline double cosine_similarity (Vector const& a, Vector const& b)
{
    if (a.size() != b.size()) throw std::invalid_argument("cosine of vectors of different length");
    double const na = a.norm();
    double const nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine of a zero vector");
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// 1 - cos(a, b), in [0, 2].
[[nodiscard]] inline double cosine_distance (Vector const& a, Vector const& b)
{
    return 1.0 - cosine_similarity(a, b);
}

struct TriggerConfig
{
    double lambda_star = 0.05;
    Vector reference;  // design at the last learning step

    void validate () const
    {
        if (!(lambda_star >= 0.0 && lambda_star <= 2.0)) {
            throw std::invalid_argument("lambda* must lie in [0, 2]");
        }
    }
};

[[nodiscard]] inline bool should_relearn (Vector const& current, TriggerConfig const& cfg)
{
    if (cfg.reference.size() == 0) {
        throw std::invalid_argument("relearn trigger has no reference design");
    }
    return cosine_distance(current, cfg.reference) > cfg.lambda_star;
}


//-----------------------------------------------------------------------------
struct TrainingPair
{
    Vector design;
    Vector gradient;
};

struct TrainingSettings
{
    std::vector<int> hidden{256, 256};
    int epochs = 500;
    int patience = 50;               // early stop on stalled validation loss
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double validation_fraction = 0.15;
    std::uint64_t seed = 0;
};

struct TrainingReport
{
    double initial_loss = 0.0;       // training MSE before the first update
    double final_loss = 0.0;         // training MSE of the returned weights
    double best_validation_loss = 0.0;
    int epochs_run = 0;
    bool constant_fallback = false;
};

class GradientNet;
GradientNet train (std::span<TrainingPair const>, GradientNet const&, TrainingSettings const&,
                   TrainingReport* = nullptr);
void write_net (std::ostream&, GradientNet const&);
GradientNet read_net (std::istream&);

// Fully connected network; tanh on hidden layers, linear output.
class GradientNet
{
public:
    GradientNet () = default;

    GradientNet (std::vector<int> layer_dims, std::uint64_t seed):
        dims_{std::move(layer_dims)}
    {
        if (dims_.size() < 2) throw std::invalid_argument("network needs at least two layers");
        for (int d : dims_) {
            if (d < 1) throw std::invalid_argument("layer widths must be positive");
        }
        if (dims_.front() != dims_.back()) {
            throw std::invalid_argument("input and output width must match");
        }
        std::mt19937_64 rng(seed);
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            int const fan_in = dims_[l];
            int const fan_out = dims_[l + 1];
            double const limit = std::sqrt(6.0 / double(fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-limit, limit);
            Matrix w(fan_out, fan_in);
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
            weights_.push_back(std::move(w));
            biases_.push_back(Vector::Zero(fan_out));
        }
        int const n = dims_.front();
        in_mean_ = Vector::Zero(n);
        in_scale_ = Vector::Ones(n);
        out_mean_ = Vector::Zero(n);
        out_scale_ = Vector::Ones(n);
    }

    // Standard architecture: n -> hidden... -> n.
    static GradientNet for_design_size (int n, std::vector<int> const& hidden, std::uint64_t seed)
    {
        std::vector<int> dims{n};
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(n);
        return {std::move(dims), seed};
    }

    [[nodiscard]] std::vector<int> const& layer_dims () const noexcept { return dims_; }
    [[nodiscard]] int input_size () const noexcept { return dims_.empty() ? 0 : dims_.front(); }
    [[nodiscard]] bool trained () const noexcept { return trained_; }
    [[nodiscard]] bool is_constant () const noexcept { return constant_; }
    [[nodiscard]] static char const* activation () noexcept { return "tanh"; }

    [[nodiscard]] std::vector<Matrix> const& weights () const noexcept { return weights_; }
    [[nodiscard]] std::vector<Vector> const& biases () const noexcept { return biases_; }

    // Gradient prediction for one design.
    [[nodiscard]] Vector predict (Vector const& x) const
    {
        if (!trained_) throw SurrogateError("prediction from an untrained network");
        if (x.size() != input_size()) {
            throw std::invalid_argument("design length does not match the network input");
        }
        if (constant_) return out_mean_;
        Matrix xs = ((x - in_mean_).cwiseQuotient(in_scale_));
        Matrix y = forward_standardized(xs);
        return out_mean_ + out_scale_.cwiseProduct(y.col(0));
    }

    friend GradientNet train (std::span<TrainingPair const>, GradientNet const&,
                              TrainingSettings const&, TrainingReport*);
    friend void write_net (std::ostream&, GradientNet const&);
    friend GradientNet read_net (std::istream&);

private:
    // columns are samples
    [[nodiscard]] Matrix forward_standardized (Matrix const& xs) const
    {
        Matrix a = xs;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Matrix z = weights_[l] * a;
            z.colwise() += biases_[l];
            if (l + 1 < weights_.size()) z = z.array().tanh();
            a = std::move(z);
        }
        return a;
    }

    std::vector<int> dims_;
    std::vector<Matrix> weights_;
    std::vector<Vector> biases_;
    Vector in_mean_, in_scale_, out_mean_, out_scale_;
    bool trained_ = false;
    bool constant_ = false;
};

[[nodiscard]] inline Vector predict (GradientNet const& net, Vector const& x)
{
    return net.predict(x);
}


namespace detail {

inline void standardize_rows (Matrix const& m, Vector& mean, Vector& scale)
{
    mean = m.rowwise().mean();
    scale.resize(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double const var = (m.row(i).array() - mean[i]).square().mean();
        double const sd = std::sqrt(var);
        scale[i] = sd > 1e-12 * (1.0 + std::abs(mean[i])) ? sd : 1.0;
    }
}

}  // namespace detail


// Full-batch Adam on the mean-squared error in standardized units.
inline GradientNet train (std::span<TrainingPair const> pairs, GradientNet const& net_init,
                          TrainingSettings const& cfg, TrainingReport* report)
{
    if (pairs.size() < 2) throw std::invalid_argument("training needs at least two pairs");
    int const n = net_init.input_size();
    if (n == 0) throw std::invalid_argument("training from an empty network");
    for (auto const& p : pairs) {
        if (p.design.size() != n || p.gradient.size() != n) {
            throw std::invalid_argument("training pair length does not match the network");
        }
        if (!p.design.allFinite() || !p.gradient.allFinite()) {
            throw SurrogateError("training pair contains nonfinite values");
        }
    }
    int const b = int(pairs.size());
    Matrix x(n, b), t(n, b);
    for (int s = 0; s < b; ++s) {
        x.col(s) = pairs[s].design;
        t.col(s) = pairs[s].gradient;
    }

    GradientNet net = net_init;
    detail::standardize_rows(x, net.in_mean_, net.in_scale_);
    Vector out_sd;
    detail::standardize_rows(t, net.out_mean_, out_sd);
    net.out_scale_ = out_sd;
    net.trained_ = true;
    net.constant_ = false;

    TrainingReport rep;
    bool const degenerate = (t.colwise() - net.out_mean_).cwiseAbs().maxCoeff()
                            <= 1e-12 * (1.0 + net.out_mean_.cwiseAbs().maxCoeff());
    if (degenerate) {
        net.constant_ = true;
        rep.constant_fallback = true;
        if (report) *report = rep;
        return net;
    }

    Matrix const xs = (x.colwise() - net.in_mean_).array().colwise() / net.in_scale_.array();
    Matrix const ts = (t.colwise() - net.out_mean_).array().colwise() / net.out_scale_.array();

    // internal validation split for early stopping
    std::vector<int> order(b);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(order.begin(), order.end(), rng);
    int const n_val = b >= 10 ? std::max(1, int(std::lround(cfg.validation_fraction * b))) : 0;
    auto gather = [&](Matrix const& m, int first, int count) {
        Matrix out(m.rows(), count);
        for (int k = 0; k < count; ++k) out.col(k) = m.col(order[first + k]);
        return out;
    };
    Matrix const x_fit = gather(xs, n_val, b - n_val);
    Matrix const t_fit = gather(ts, n_val, b - n_val);
    Matrix const x_val = gather(xs, 0, n_val);
    Matrix const t_val = gather(ts, 0, n_val);

    auto const layers = net.weights_.size();
    auto mse = [&](Matrix const& in, Matrix const& target) {
        return (net.forward_standardized(in) - target).squaredNorm() / double(target.size());
    };
    rep.initial_loss = mse(xs, ts);

    std::vector<Matrix> mw, vw, gw(layers);
    std::vector<Vector> mb, vb, gb(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        mw.push_back(Matrix::Zero(net.weights_[l].rows(), net.weights_[l].cols()));
        vw.push_back(mw.back());
        mb.push_back(Vector::Zero(net.biases_[l].size()));
        vb.push_back(mb.back());
    }
    double const beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    auto best_w = net.weights_;
    auto best_b = net.biases_;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<Matrix> acts(layers + 1);
    double const inv_count = 2.0 / double(t_fit.size());

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        acts[0] = x_fit;
        for (std::size_t l = 0; l < layers; ++l) {
            Matrix z = net.weights_[l] * acts[l];
            z.colwise() += net.biases_[l];
            if (l + 1 < layers) z = z.array().tanh();
            acts[l + 1] = std::move(z);
        }
        Matrix delta = (acts[layers] - t_fit) * inv_count;
        double const fit_loss = delta.squaredNorm() / (inv_count * inv_count) / double(t_fit.size());
        if (!std::isfinite(fit_loss)) {
            throw SurrogateError("training loss became nonfinite at epoch " + std::to_string(epoch));
        }
        for (std::size_t l = layers; l-- > 0;) {
            gw[l].noalias() = delta * acts[l].transpose();
            gb[l] = delta.rowwise().sum();
            if (l > 0) {
                Matrix back = net.weights_[l].transpose() * delta;
                delta = back.array() * (1.0 - acts[l].array().square());
            }
        }
        double const c1 = 1.0 - std::pow(beta1, epoch);
        double const c2 = 1.0 - std::pow(beta2, epoch);
        double const step = cfg.learning_rate * std::sqrt(c2) / c1;
        for (std::size_t l = 0; l < layers; ++l) {
            if (cfg.weight_decay > 0.0) gw[l] += cfg.weight_decay * net.weights_[l];
            mw[l] = beta1 * mw[l] + (1.0 - beta1) * gw[l];
            vw[l] = beta2 * vw[l] + (1.0 - beta2) * gw[l].cwiseAbs2();
            net.weights_[l].array() -= step * mw[l].array() / (vw[l].array().sqrt() + eps);
            mb[l] = beta1 * mb[l] + (1.0 - beta1) * gb[l];
            vb[l] = beta2 * vb[l] + (1.0 - beta2) * gb[l].cwiseAbs2();
            net.biases_[l].array() -= step * mb[l].array() / (vb[l].array().sqrt() + eps);
        }
        rep.epochs_run = epoch;

        double const monitored = n_val > 0 ? mse(x_val, t_val) : fit_loss;
        if (monitored < best) {
            best = monitored;
            best_w = net.weights_;
            best_b = net.biases_;
            since_best = 0;
        }
        else if (++since_best >= cfg.patience) {
            break;
        }
    }
    net.weights_ = std::move(best_w);
    net.biases_ = std::move(best_b);
    rep.best_validation_loss = best;
    rep.final_loss = mse(xs, ts);
    if (!std::isfinite(rep.final_loss)) throw SurrogateError("trained network has nonfinite loss");
    if (report) *report = rep;
    return net;
}


//-----------------------------------------------------------------------------
// Text format:
//   sdlto-gradnet 1
//   activation tanh
//   layers <count> <width>...
//   constant <0|1>
//   in_mean / in_scale / out_mean / out_scale   one line of n values each
//   weight <l> <rows> <cols>  followed by rows lines, row-major
//   bias <l> <size>           followed by one line

namespace detail {

inline void write_row (std::ostream& os, auto const& v)
{
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) os << ' ';
        os << v[i];
    }
    os << '\n';
}

inline void expect_token (std::istream& is, std::string const& want)
{
    std::string got;
    if (!(is >> got) || got != want) {
        throw Error("malformed network file: expected '" + want + "', found '" + got + "'");
    }
}

inline Vector read_values (std::istream& is, Eigen::Index n)
{
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(is >> v[i])) throw Error("malformed network file: truncated values");
    }
    return v;
}

}  // namespace detail

inline void write_net (std::ostream& os, GradientNet const& net)
{
    if (!net.trained_) throw SurrogateError("refusing to serialize an untrained network");
    auto const flags = os.flags();
    auto const prec = os.precision();
    os << std::setprecision(17);
    os << "sdlto-gradnet 1\nactivation " << GradientNet::activation() << "\nlayers " << net.dims_.size();
    for (int d : net.dims_) os << ' ' << d;
    os << "\nconstant " << (net.constant_ ? 1 : 0) << '\n';
    os << "in_mean\n";   detail::write_row(os, net.in_mean_);
    os << "in_scale\n";  detail::write_row(os, net.in_scale_);
    os << "out_mean\n";  detail::write_row(os, net.out_mean_);
    os << "out_scale\n"; detail::write_row(os, net.out_scale_);
    for (std::size_t l = 0; l < net.weights_.size(); ++l) {
        auto const& w = net.weights_[l];
        os << "weight " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
        for (Eigen::Index r = 0; r < w.rows(); ++r) detail::write_row(os, w.row(r));
        os << "bias " << l << ' ' << net.biases_[l].size() << '\n';
        detail::write_row(os, net.biases_[l]);
    }
    os.flags(flags);
    os.precision(prec);
}

inline GradientNet read_net (std::istream& is)
{
    detail::expect_token(is, "sdlto-gradnet");
    detail::expect_token(is, "1");
    detail::expect_token(is, "activation");
    detail::expect_token(is, "tanh");
    detail::expect_token(is, "layers");
    std::size_t count = 0;
    if (!(is >> count) || count < 2 || count > 64) throw Error("malformed network file: layer count");
    GradientNet net;
    net.dims_.resize(count);
    for (auto& d : net.dims_) {
        if (!(is >> d) || d < 1) throw Error("malformed network file: layer width");
    }
    detail::expect_token(is, "constant");
    int constant = 0;
    is >> constant;
    net.constant_ = constant != 0;
    int const n = net.dims_.front();
    detail::expect_token(is, "in_mean");   net.in_mean_ = detail::read_values(is, n);
    detail::expect_token(is, "in_scale");  net.in_scale_ = detail::read_values(is, n);
    detail::expect_token(is, "out_mean");  net.out_mean_ = detail::read_values(is, net.dims_.back());
    detail::expect_token(is, "out_scale"); net.out_scale_ = detail::read_values(is, net.dims_.back());
    for (std::size_t l = 0; l + 1 < count; ++l) {
        detail::expect_token(is, "weight");
        std::size_t idx = 0;
        Eigen::Index rows = 0, cols = 0;
        is >> idx >> rows >> cols;
        if (idx != l || rows != net.dims_[l + 1] || cols != net.dims_[l]) {
            throw Error("malformed network file: weight header");
        }
        Matrix w(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) w.row(r) = detail::read_values(is, cols);
        net.weights_.push_back(std::move(w));
        detail::expect_token(is, "bias");
        is >> idx >> rows;
        if (idx != l || rows != net.dims_[l + 1]) throw Error("malformed network file: bias header");
        net.biases_.push_back(detail::read_values(is, rows));
    }
    net.trained_ = true;
    return net;
}

inline void save_net (GradientNet const& net, std::string const& path)
{
    std::ofstream os(path);
    if (!os) throw IoError(path, "cannot open network file for writing");
    write_net(os, net);
    if (!os) throw IoError(path, "failed writing network file");
}

[[nodiscard]] inline GradientNet load_net (std::string const& path)
{
    std::ifstream is(path);
    if (!is) throw IoError(path, "cannot open network file");
    return read_net(is);
}

}  // namespace sdlto

#endif
