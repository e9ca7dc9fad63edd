#include "sepsislab/model.hpp"

#include <cmath>
#include <random>

#include "sepsislab/errors.hpp"
#include "sepsislab/rng.hpp"

namespace sepsislab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Index idx(std::size_t n) { return static_cast<Index>(n); }

VectorXd sigmoid_vec(const VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

// Softmax of `scores`, stable under large magnitudes.
VectorXd softmax(const VectorXd& scores) {
    const double m = scores.maxCoeff();
    VectorXd e = (scores.array() - m).exp().matrix();
    return e / e.sum();
}

template <typename View, typename Mat>
void push(std::vector<View>& out, const std::string& name, Mat& m) {
    out.push_back(View{name, {m.data(), static_cast<std::size_t>(m.size())}, m.rows(), m.cols()});
}

template <typename View, typename P>
std::vector<View> collect(P& p) {
    std::vector<View> out;
    push(out, "embed_value", p.embed_value);
    push(out, "embed_recency", p.embed_recency);
    push(out, "embed_bias", p.embed_bias);
    push(out, "var_attn_w", p.var_attn_w);
    push(out, "var_attn_b", p.var_attn_b);
    push(out, "var_attn_v", p.var_attn_v);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& L = p.layers[l];
        const std::string pre = "lstm" + std::to_string(l) + ".";
        push(out, pre + "w_input", L.w_input);
        push(out, pre + "w_recurrent", L.w_recurrent);
        push(out, pre + "bias", L.bias);
        push(out, pre + "h0_proj", L.h0_proj);
        push(out, pre + "h0_bias", L.h0_bias);
        push(out, pre + "c0_proj", L.c0_proj);
        push(out, pre + "c0_bias", L.c0_bias);
    }
    push(out, "col_attn_w", p.col_attn_w);
    push(out, "col_attn_b", p.col_attn_b);
    push(out, "col_attn_v", p.col_attn_v);
    push(out, "head_w", p.head_w);
    push(out, "head_b", p.head_b);
    return out;
}

// Everything the backward pass needs from one forward evaluation.
struct StepCache {
    std::vector<VariableId> vars;
    VectorXd values;
    VectorXd recency;
    MatrixXd emb;    // E x n
    MatrixXd act;    // E x n, tanh(W e + b)
    VectorXd alpha;  // n
    VectorXd context;
};

struct CellCache {
    VectorXd gates;  // activated [i, f, g, o]
    VectorXd c;
    VectorXd tanh_c;
    VectorXd h;
};

struct Cache {
    std::vector<StepCache> steps;
    std::vector<VectorXd> h0, c0;                // per layer
    std::vector<std::vector<CellCache>> cells;  // [layer][t]
    MatrixXd col_act;                           // H x T
    VectorXd beta;                              // T
    VectorXd pooled;
    double logit = 0.0;
};

void check_input(const ModelParams& p, const SequenceInput& in) {
    if (in.statics.size() != idx(p.shape.static_dim))
        throw ConfigError("static feature vector has " + std::to_string(in.statics.size()) + " entries, model expects " +
                          std::to_string(p.shape.static_dim));
    for (const auto& s : in.steps)
        for (const auto& r : s.readings)
            if (r.variable < 0 || static_cast<std::size_t>(r.variable) >= p.shape.num_variables)
                throw ConfigError("reading references variable " + std::to_string(r.variable) +
                                  " outside the model vocabulary");
}

void lstm_cell(const LstmLayerParams& L, const VectorXd& x, const VectorXd& h_prev, const VectorXd& c_prev,
               Index H, CellCache& out) {
    VectorXd pre = L.w_input * x + L.w_recurrent * h_prev + L.bias;
    out.gates.resize(4 * H);
    out.gates.segment(0, H) = sigmoid_vec(pre.segment(0, H));
    out.gates.segment(H, H) = sigmoid_vec(pre.segment(H, H));
    out.gates.segment(2 * H, H) = pre.segment(2 * H, H).array().tanh().matrix();
    out.gates.segment(3 * H, H) = sigmoid_vec(pre.segment(3 * H, H));
    out.c = out.gates.segment(H, H).cwiseProduct(c_prev) + out.gates.segment(0, H).cwiseProduct(out.gates.segment(2 * H, H));
    out.tanh_c = out.c.array().tanh().matrix();
    out.h = out.gates.segment(3 * H, H).cwiseProduct(out.tanh_c);
}

void variable_attention(const ModelParams& p, const Step& step, StepCache& sc) {
    const Index E = idx(p.shape.embed_dim);
    const Index n = idx(step.readings.size());
    sc.vars.resize(step.readings.size());
    sc.values.resize(n);
    sc.recency.resize(n);
    sc.emb.resize(E, n);
    for (Index j = 0; j < n; ++j) {
        const auto& r = step.readings[static_cast<std::size_t>(j)];
        sc.vars[static_cast<std::size_t>(j)] = r.variable;
        sc.values(j) = r.value;
        sc.recency(j) = r.recency;
        sc.emb.col(j) = r.value * p.embed_value.col(r.variable) + r.recency * p.embed_recency.col(r.variable) +
                        p.embed_bias.col(r.variable);
    }
    if (n == 0) {
        sc.act.resize(E, 0);
        sc.alpha.resize(0);
        sc.context = VectorXd::Zero(E);
        return;
    }
    sc.act = ((p.var_attn_w * sc.emb).colwise() + p.var_attn_b).array().tanh().matrix();
    const VectorXd scores = sc.act.transpose() * p.var_attn_v;
    sc.alpha = softmax(scores);
    sc.context = sc.emb * sc.alpha;
}

void run_forward(const ModelParams& p, const SequenceInput& in, Cache& cache) {
    check_input(p, in);
    const Index H = idx(p.shape.hidden_dim);
    const std::size_t T = in.steps.size();
    const std::size_t L = p.layers.size();

    cache.steps.resize(T);
    for (std::size_t t = 0; t < T; ++t) variable_attention(p, in.steps[t], cache.steps[t]);

    cache.h0.resize(L);
    cache.c0.resize(L);
    cache.cells.assign(L, std::vector<CellCache>(T));
    for (std::size_t l = 0; l < L; ++l) {
        const auto& layer = p.layers[l];
        cache.h0[l] = layer.h0_proj * in.statics + layer.h0_bias;
        cache.c0[l] = layer.c0_proj * in.statics + layer.c0_bias;
        for (std::size_t t = 0; t < T; ++t) {
            const VectorXd& x = l == 0 ? cache.steps[t].context : cache.cells[l - 1][t].h;
            const VectorXd& h_prev = t == 0 ? cache.h0[l] : cache.cells[l][t - 1].h;
            const VectorXd& c_prev = t == 0 ? cache.c0[l] : cache.cells[l][t - 1].c;
            lstm_cell(layer, x, h_prev, c_prev, H, cache.cells[l][t]);
        }
    }

    if (T == 0) {
        cache.col_act.resize(H, 0);
        cache.beta.resize(0);
        cache.pooled = cache.h0[L - 1];
    } else {
        MatrixXd top(H, idx(T));
        for (std::size_t t = 0; t < T; ++t) top.col(idx(t)) = cache.cells[L - 1][t].h;
        cache.col_act = ((p.col_attn_w * top).colwise() + p.col_attn_b).array().tanh().matrix();
        const VectorXd scores = cache.col_act.transpose() * p.col_attn_v;
        cache.beta = softmax(scores);
        cache.pooled = top * cache.beta;
    }
    cache.logit = p.head_w.dot(cache.pooled) + p.head_b(0);
}

}  // namespace

void ModelShape::validate() const {
    if (num_variables < 1 || embed_dim < 1 || hidden_dim < 1 || num_layers < 1)
        throw ConfigError("model dimensions must be >= 1");
}

ModelParams ModelParams::zeros(const ModelShape& shape) {
    shape.validate();
    const Index V = idx(shape.num_variables), S = idx(shape.static_dim), E = idx(shape.embed_dim),
                H = idx(shape.hidden_dim);
    ModelParams p;
    p.shape = shape;
    p.embed_value = MatrixXd::Zero(E, V);
    p.embed_recency = MatrixXd::Zero(E, V);
    p.embed_bias = MatrixXd::Zero(E, V);
    p.var_attn_w = MatrixXd::Zero(E, E);
    p.var_attn_b = VectorXd::Zero(E);
    p.var_attn_v = VectorXd::Zero(E);
    for (std::size_t l = 0; l < shape.num_layers; ++l) {
        LstmLayerParams L;
        const Index in = l == 0 ? E : H;
        L.w_input = MatrixXd::Zero(4 * H, in);
        L.w_recurrent = MatrixXd::Zero(4 * H, H);
        L.bias = VectorXd::Zero(4 * H);
        L.h0_proj = MatrixXd::Zero(H, S);
        L.h0_bias = VectorXd::Zero(H);
        L.c0_proj = MatrixXd::Zero(H, S);
        L.c0_bias = VectorXd::Zero(H);
        p.layers.push_back(std::move(L));
    }
    p.col_attn_w = MatrixXd::Zero(H, H);
    p.col_attn_b = VectorXd::Zero(H);
    p.col_attn_v = VectorXd::Zero(H);
    p.head_w = VectorXd::Zero(H);
    p.head_b = VectorXd::Zero(1);
    return p;
}

ModelParams ModelParams::initialize(const ModelShape& shape, std::uint64_t seed) {
    ModelParams p = zeros(shape);
    SplitMix64 rng(mix64(seed));
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    auto xavier = [&](MatrixXd& m, Index fan_in, Index fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (Index j = 0; j < m.cols(); ++j)
            for (Index i = 0; i < m.rows(); ++i) m(i, j) = limit * unif(rng);
    };
    auto uniform_vec = [&](VectorXd& v, double limit) {
        for (Index i = 0; i < v.size(); ++i) v(i) = limit * unif(rng);
    };
    const Index E = idx(shape.embed_dim), H = idx(shape.hidden_dim), S = idx(shape.static_dim);
    xavier(p.embed_value, 1, E);
    xavier(p.embed_recency, 1, E);
    xavier(p.embed_bias, 1, E);
    xavier(p.var_attn_w, E, E);
    uniform_vec(p.var_attn_v, 1.0 / std::sqrt(static_cast<double>(E)));
    for (auto& L : p.layers) {
        xavier(L.w_input, L.w_input.cols(), H);
        xavier(L.w_recurrent, H, H);
        L.bias.segment(H, H).setOnes();
        xavier(L.h0_proj, S, H);
        xavier(L.c0_proj, S, H);
    }
    xavier(p.col_attn_w, H, H);
    uniform_vec(p.col_attn_v, 1.0 / std::sqrt(static_cast<double>(H)));
    uniform_vec(p.head_w, 1.0 / std::sqrt(static_cast<double>(H)));
    return p;
}

std::vector<TensorView> ModelParams::tensors() { return collect<TensorView>(*this); }
std::vector<ConstTensorView> ModelParams::tensors() const { return collect<ConstTensorView>(*this); }

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.data.size();
    return n;
}

void ModelParams::check_shapes() const {
    const ModelParams ref = zeros(shape);
    const auto mine = tensors();
    const auto want = ref.tensors();
    if (mine.size() != want.size()) throw ConfigError("parameter tensor count does not match the model shape");
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].rows != want[i].rows || mine[i].cols != want[i].cols)
            throw ConfigError("tensor " + want[i].name + " has shape " + std::to_string(mine[i].rows) + "x" +
                              std::to_string(mine[i].cols) + ", expected " + std::to_string(want[i].rows) + "x" +
                              std::to_string(want[i].cols));
    }
}

bool ModelParams::all_finite() const {
    for (const auto& t : tensors())
        for (double x : t.data)
            if (!std::isfinite(x)) return false;
    return true;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double bce_loss(double logit, int label) {
    // softplus(z) - y z, evaluated without overflow
    const double softplus = logit > 0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
    return softplus - (label ? logit : 0.0);
}

ForwardTrace forward(const ModelParams& params, const SequenceInput& input) {
    Cache cache;
    run_forward(params, input, cache);
    ForwardTrace trace;
    const std::size_t T = input.steps.size();
    const std::size_t L = params.layers.size();
    trace.attended_variables.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        trace.attended_variables.push_back(cache.steps[t].vars);
        trace.variable_attention.push_back(cache.steps[t].alpha);
        trace.hidden.push_back(cache.cells[L - 1][t].h);
    }
    trace.collection_attention = cache.beta;
    trace.logit = cache.logit;
    trace.probability = sigmoid(cache.logit);
    return trace;
}

double loss_and_gradient(const ModelParams& p, const SequenceInput& in, int label, ModelParams& g, double weight) {
    Cache cache;
    run_forward(p, in, cache);
    const Index H = idx(p.shape.hidden_dim);
    const std::size_t T = in.steps.size();
    const std::size_t L = p.layers.size();

    const double prob = sigmoid(cache.logit);
    const double dz = weight * (prob - (label ? 1.0 : 0.0));
    g.head_w += dz * cache.pooled;
    g.head_b(0) += dz;
    const VectorXd d_pooled = dz * p.head_w;

    // d loss / d (top-layer output at t)
    std::vector<VectorXd> d_out(T, VectorXd::Zero(H));
    if (T == 0) {
        auto& top = g.layers[L - 1];
        top.h0_proj += d_pooled * in.statics.transpose();
        top.h0_bias += d_pooled;
        return bce_loss(cache.logit, label);
    }

    {
        VectorXd d_beta(idx(T));
        for (std::size_t t = 0; t < T; ++t) {
            const VectorXd& h = cache.cells[L - 1][t].h;
            d_beta(idx(t)) = d_pooled.dot(h);
            d_out[t] = cache.beta(idx(t)) * d_pooled;
        }
        const double avg = cache.beta.dot(d_beta);
        const VectorXd d_score = cache.beta.cwiseProduct((d_beta.array() - avg).matrix());
        for (std::size_t t = 0; t < T; ++t) {
            const VectorXd u = cache.col_act.col(idx(t));
            const double ds = d_score(idx(t));
            g.col_attn_v += ds * u;
            const VectorXd da = (ds * p.col_attn_v.array() * (1.0 - u.array().square())).matrix();
            g.col_attn_w += da * cache.cells[L - 1][t].h.transpose();
            g.col_attn_b += da;
            d_out[t] += p.col_attn_w.transpose() * da;
        }
    }

    // Backpropagation through time, top layer first.
    for (std::size_t li = L; li-- > 0;) {
        const auto& layer = p.layers[li];
        auto& gl = g.layers[li];
        const auto& cells = cache.cells[li];
        VectorXd dh_next = VectorXd::Zero(H), dc_next = VectorXd::Zero(H);
        std::vector<VectorXd> d_in(T);
        for (std::size_t t = T; t-- > 0;) {
            const auto& cc = cells[t];
            const VectorXd& c_prev = t == 0 ? cache.c0[li] : cells[t - 1].c;
            const VectorXd& h_prev = t == 0 ? cache.h0[li] : cells[t - 1].h;
            const VectorXd& x = li == 0 ? cache.steps[t].context : cache.cells[li - 1][t].h;
            const auto i = cc.gates.segment(0, H).array();
            const auto f = cc.gates.segment(H, H).array();
            const auto gg = cc.gates.segment(2 * H, H).array();
            const auto o = cc.gates.segment(3 * H, H).array();

            const Eigen::ArrayXd dh = (d_out[t] + dh_next).array();
            const Eigen::ArrayXd dc = dc_next.array() + dh * o * (1.0 - cc.tanh_c.array().square());
            VectorXd d_pre(4 * H);
            d_pre.segment(0, H) = (dc * gg * i * (1.0 - i)).matrix();
            d_pre.segment(H, H) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
            d_pre.segment(2 * H, H) = (dc * i * (1.0 - gg.square())).matrix();
            d_pre.segment(3 * H, H) = (dh * cc.tanh_c.array() * o * (1.0 - o)).matrix();

            gl.w_input.noalias() += d_pre * x.transpose();
            gl.w_recurrent.noalias() += d_pre * h_prev.transpose();
            gl.bias += d_pre;
            d_in[t] = layer.w_input.transpose() * d_pre;
            dh_next = layer.w_recurrent.transpose() * d_pre;
            dc_next = (dc * f).matrix();
        }
        gl.h0_proj += dh_next * in.statics.transpose();
        gl.h0_bias += dh_next;
        gl.c0_proj += dc_next * in.statics.transpose();
        gl.c0_bias += dc_next;
        d_out = std::move(d_in);  // after layer 0: d loss / d context
    }

    // Variable attention and value embedding.
    for (std::size_t t = 0; t < T; ++t) {
        const auto& sc = cache.steps[t];
        const Index n = idx(sc.vars.size());
        if (n == 0) continue;
        const VectorXd& d_ctx = d_out[t];
        const VectorXd d_alpha = sc.emb.transpose() * d_ctx;
        const double avg = sc.alpha.dot(d_alpha);
        const VectorXd d_score = sc.alpha.cwiseProduct((d_alpha.array() - avg).matrix());
        for (Index j = 0; j < n; ++j) {
            const VectorXd u = sc.act.col(j);
            const double ds = d_score(j);
            g.var_attn_v += ds * u;
            const VectorXd da = (ds * p.var_attn_v.array() * (1.0 - u.array().square())).matrix();
            g.var_attn_w += da * sc.emb.col(j).transpose();
            g.var_attn_b += da;
            const VectorXd d_emb = sc.alpha(j) * d_ctx + p.var_attn_w.transpose() * da;
            const VariableId v = sc.vars[static_cast<std::size_t>(j)];
            g.embed_value.col(v) += sc.values(j) * d_emb;
            g.embed_recency.col(v) += sc.recency(j) * d_emb;
            g.embed_bias.col(v) += d_emb;
        }
    }
    return bce_loss(cache.logit, label);
}

PrefixState run_prefix(const ModelParams& p, const VectorXd& statics, std::span<const Step> steps) {
    SequenceInput in;
    in.statics = statics;
    in.steps.assign(steps.begin(), steps.end());
    check_input(p, in);

    const Index H = idx(p.shape.hidden_dim);
    const std::size_t L = p.layers.size();
    PrefixState st;
    st.h.resize(L);
    st.c.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        st.h[l] = p.layers[l].h0_proj * statics + p.layers[l].h0_bias;
        st.c[l] = p.layers[l].c0_proj * statics + p.layers[l].c0_bias;
    }
    st.weighted = VectorXd::Zero(H);
    StepCache sc;
    CellCache cell;
    for (const auto& step : steps) {
        variable_attention(p, step, sc);
        VectorXd x = sc.context;
        for (std::size_t l = 0; l < L; ++l) {
            lstm_cell(p.layers[l], x, st.h[l], st.c[l], H, cell);
            st.h[l] = cell.h;
            st.c[l] = cell.c;
            x = cell.h;
        }
        const double s =
            p.col_attn_v.dot(((p.col_attn_w * x) + p.col_attn_b).array().tanh().matrix());
        if (!st.has_outputs) {
            st.has_outputs = true;
            st.max_score = s;
            st.denom = 1.0;
            st.weighted = x;
        } else if (s > st.max_score) {
            const double scale = std::exp(st.max_score - s);
            st.denom = st.denom * scale + 1.0;
            st.weighted = st.weighted * scale + x;
            st.max_score = s;
        } else {
            const double w = std::exp(s - st.max_score);
            st.denom += w;
            st.weighted += w * x;
        }
    }
    return st;
}

VectorXd evaluate_final_step(const ModelParams& p, const PrefixState& prefix, std::span<const Reading> fixed,
                             std::span<const VariableId> free_vars, const MatrixXd& free_values) {
    const Index E = idx(p.shape.embed_dim), H = idx(p.shape.hidden_dim);
    const Index n_free = idx(free_vars.size());
    const Index n_fixed = idx(fixed.size());
    if (free_values.rows() != n_free) throw ConfigError("free_values must have one row per free variable");
    const Index N = free_values.cols();
    if (N == 0) return VectorXd(0);
    for (const auto& r : fixed)
        if (r.variable < 0 || static_cast<std::size_t>(r.variable) >= p.shape.num_variables)
            throw ConfigError("reading references variable outside the model vocabulary");
    for (auto v : free_vars)
        if (v < 0 || static_cast<std::size_t>(v) >= p.shape.num_variables)
            throw ConfigError("free variable outside the model vocabulary");

    const Index n_all = n_fixed + n_free;
    MatrixXd ctx = MatrixXd::Zero(E, N);
    if (n_all > 0) {
        // Scores: rows = readings (fixed first, then free), cols = completions.
        MatrixXd scores(n_all, N);
        MatrixXd fixed_emb(E, n_fixed);
        for (Index j = 0; j < n_fixed; ++j) {
            const auto& r = fixed[static_cast<std::size_t>(j)];
            fixed_emb.col(j) = r.value * p.embed_value.col(r.variable) + r.recency * p.embed_recency.col(r.variable) +
                               p.embed_bias.col(r.variable);
            const double s = p.var_attn_v.dot(((p.var_attn_w * fixed_emb.col(j)) + p.var_attn_b).array().tanh().matrix());
            scores.row(j).setConstant(s);
        }
        MatrixXd slope(E, n_free), offset(E, n_free);
        for (Index r = 0; r < n_free; ++r) {
            const VariableId v = free_vars[static_cast<std::size_t>(r)];
            slope.col(r) = p.embed_value.col(v);
            offset.col(r) = p.embed_recency.col(v) + p.embed_bias.col(v);
            const VectorXd a = p.var_attn_w * slope.col(r);
            const VectorXd b = p.var_attn_w * offset.col(r) + p.var_attn_b;
            const MatrixXd act = ((a * free_values.row(r)).colwise() + b).array().tanh().matrix();
            scores.row(n_fixed + r) = p.var_attn_v.transpose() * act;
        }
        const Eigen::RowVectorXd col_max = scores.colwise().maxCoeff();
        MatrixXd w = (scores.rowwise() - col_max).array().exp().matrix();
        const Eigen::RowVectorXd col_sum = w.colwise().sum();
        w.array().rowwise() /= col_sum.array();
        if (n_fixed > 0) ctx.noalias() += fixed_emb * w.topRows(n_fixed);
        if (n_free > 0) {
            const MatrixXd w_free = w.bottomRows(n_free);
            ctx.noalias() += slope * w_free.cwiseProduct(free_values);
            ctx.noalias() += offset * w_free;
        }
    }

    MatrixXd x = std::move(ctx);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        const VectorXd rec = layer.w_recurrent * prefix.h[l] + layer.bias;
        MatrixXd pre = layer.w_input * x;
        pre.colwise() += rec;
        const auto i = (1.0 + (-pre.topRows(H).array()).exp()).inverse();
        const auto f = (1.0 + (-pre.middleRows(H, H).array()).exp()).inverse();
        const auto g = pre.middleRows(2 * H, H).array().tanh();
        const auto o = (1.0 + (-pre.bottomRows(H).array()).exp()).inverse();
        const Eigen::ArrayXXd c = (f.colwise() * prefix.c[l].array()) + i * g;
        x = (o * c.tanh()).matrix();
    }

    const Eigen::RowVectorXd s =
        p.col_attn_v.transpose() * ((p.col_attn_w * x).colwise() + p.col_attn_b).array().tanh().matrix();
    VectorXd out(N);
    for (Index n = 0; n < N; ++n) {
        VectorXd pooled;
        if (!prefix.has_outputs) {
            pooled = x.col(n);
        } else {
            const double m = std::max(prefix.max_score, s(n));
            const double a = std::exp(prefix.max_score - m);
            const double b = std::exp(s(n) - m);
            pooled = (prefix.weighted * a + x.col(n) * b) / (prefix.denom * a + b);
        }
        out(n) = sigmoid(p.head_w.dot(pooled) + p.head_b(0));
    }
    return out;
}

}  // namespace sepsislab
