// Test-only oracles, independent of the library's forward/backward path.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "debiaslab/tiny_transformer.hpp"

namespace oracles {

// Full-activation-dump forward pass over a token sequence (BOS included by
// the caller), written as plain nested loops against the named parameters.
struct Activations {
    std::vector<Eigen::MatrixXd> mlp_h; // per layer, 4d x T
    std::vector<Eigen::MatrixXd> mlp_out; // per layer, d x T
    Eigen::MatrixXd logits; // vocab x T
};

inline Eigen::VectorXd ln_oracle(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                 const Eigen::VectorXd& b) {
    const int d = static_cast<int>(x.size());
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += x(i);
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (x(i) - mu) * (x(i) - mu);
    var /= d;
    double rstd = 1.0 / std::sqrt(var + 1e-5);
    Eigen::VectorXd out(d);
    for (int i = 0; i < d; ++i) out(i) = (x(i) - mu) * rstd * g(i) + b(i);
    return out;
}

inline Activations forward_oracle(const debiaslab::TinyTransformer& model,
                                  const std::vector<int>& seq) {
    const auto& cfg = model.config();
    const int d = cfg.hidden_dim;
    const int H = cfg.num_heads;
    const int dh = d / H;
    const int T = static_cast<int>(seq.size());

    Eigen::MatrixXd wtok = model.named_param("wtok");
    Eigen::MatrixXd wpos = model.named_param("wpos");
    Eigen::MatrixXd x(d, T);
    for (int t = 0; t < T; ++t) x.col(t) = wtok.col(seq[t]) + wpos.col(t);

    Activations acts;
    for (int l = 0; l < cfg.num_layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        Eigen::VectorXd ln1_g = model.named_param(p + "ln1_g").col(0);
        Eigen::VectorXd ln1_b = model.named_param(p + "ln1_b").col(0);
        Eigen::MatrixXd wqkv = model.named_param(p + "wqkv");
        Eigen::VectorXd bqkv = model.named_param(p + "bqkv").col(0);
        Eigen::MatrixXd wo = model.named_param(p + "wo");
        Eigen::VectorXd bo = model.named_param(p + "bo").col(0);
        Eigen::VectorXd ln2_g = model.named_param(p + "ln2_g").col(0);
        Eigen::VectorXd ln2_b = model.named_param(p + "ln2_b").col(0);
        Eigen::MatrixXd wup = model.named_param(p + "wup");
        Eigen::VectorXd bup = model.named_param(p + "bup").col(0);
        Eigen::MatrixXd wdown = model.named_param(p + "wdown");
        Eigen::VectorXd bdown = model.named_param(p + "bdown").col(0);

        Eigen::MatrixXd a(d, T);
        for (int t = 0; t < T; ++t) a.col(t) = ln_oracle(x.col(t), ln1_g, ln1_b);

        Eigen::MatrixXd attn(d, T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXd qkv_t = wqkv * a.col(t) + bqkv;
            (void)qkv_t;
        }
        // per-position attention with explicit loops
        std::vector<Eigen::VectorXd> q(T), k(T), v(T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXd qkv_t = wqkv * a.col(t) + bqkv;
            q[t] = qkv_t.segment(0, d);
            k[t] = qkv_t.segment(d, d);
            v[t] = qkv_t.segment(2 * d, d);
        }
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXd concat(d);
            for (int h = 0; h < H; ++h) {
                std::vector<double> scores(static_cast<size_t>(t) + 1);
                double mx = -1e300;
                for (int j = 0; j <= t; ++j) {
                    double s = 0.0;
                    for (int r = 0; r < dh; ++r) s += q[t](h * dh + r) * k[j](h * dh + r);
                    s /= std::sqrt(static_cast<double>(dh));
                    scores[j] = s;
                    mx = std::max(mx, s);
                }
                double denom = 0.0;
                for (int j = 0; j <= t; ++j) denom += std::exp(scores[j] - mx);
                Eigen::VectorXd o = Eigen::VectorXd::Zero(dh);
                for (int j = 0; j <= t; ++j) {
                    double w = std::exp(scores[j] - mx) / denom;
                    for (int r = 0; r < dh; ++r) o(r) += w * v[j](h * dh + r);
                }
                concat.segment(h * dh, dh) = o;
            }
            attn.col(t) = wo * concat + bo;
        }
        x += attn;

        Eigen::MatrixXd h_act(4 * d, T), mlp(d, T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXd m = ln_oracle(x.col(t), ln2_g, ln2_b);
            Eigen::VectorXd hpre = wup * m + bup;
            Eigen::VectorXd h(4 * d);
            for (int i = 0; i < 4 * d; ++i) {
                h(i) = 0.5 * hpre(i) * (1.0 + std::erf(hpre(i) / std::sqrt(2.0)));
            }
            h_act.col(t) = h;
            mlp.col(t) = wdown * h + bdown;
        }
        acts.mlp_h.push_back(h_act);
        acts.mlp_out.push_back(mlp);
        x += mlp;
    }

    Eigen::VectorXd lnf_g = model.named_param("lnf_g").col(0);
    Eigen::VectorXd lnf_b = model.named_param("lnf_b").col(0);
    Eigen::MatrixXd whead = model.named_param("whead");
    Eigen::VectorXd bhead = model.named_param("bhead").col(0);
    acts.logits.resize(cfg.vocab_size, T);
    for (int t = 0; t < T; ++t) {
        acts.logits.col(t) = whead * ln_oracle(x.col(t), lnf_g, lnf_b) + bhead;
    }
    return acts;
}

inline std::vector<int> seq_with_bos(const debiaslab::TinyTransformer& model,
                                     const std::string& text) {
    std::vector<int> ids = model.tokenizer().encode(text);
    std::vector<int> seq;
    seq.push_back(model.tokenizer().bos_id());
    seq.insert(seq.end(), ids.begin(), ids.end());
    return seq;
}

inline double log_softmax_entry(const Eigen::VectorXd& logits, int index) {
    double mx = logits.maxCoeff();
    double lse = std::log((logits.array() - mx).exp().sum()) + mx;
    return logits(index) - lse;
}

// Independent per-position scoring: one oracle forward per prefix.
inline double sequence_logprob_oracle(const debiaslab::TinyTransformer& model,
                                      const std::string& text) {
    std::vector<int> ids = model.tokenizer().encode(text);
    double total = 0.0;
    for (size_t i = 0; i < ids.size(); ++i) {
        std::vector<int> seq;
        seq.push_back(model.tokenizer().bos_id());
        seq.insert(seq.end(), ids.begin(), ids.begin() + static_cast<long>(i));
        Activations acts = forward_oracle(model, seq);
        total += log_softmax_entry(acts.logits.col(static_cast<long>(seq.size()) - 1), ids[i]);
    }
    return total;
}

} // namespace oracles
