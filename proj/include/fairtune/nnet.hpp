#pragma once

// Toy decoder-style transformer regressor for 40 Hz PPG windows.
//
// Layout: 40-sample patches -> linear patch embedding -> pre-norm blocks (causal multi-head attention with
// rotary positions, GELU feed-forward) -> final layer norm. The HR head reads the mean-pooled normalized
// features; the reconstruction head emits a (mu, log b) pair per input sample for the logit-Laplace term.
// Everything is float64 and gradients are computed by explicit reverse-mode passes.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fairtune/common.hpp"
#include "fairtune/synthpg.hpp"

namespace fairtune::nnet {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

enum class SizeClass { XS, S, M, L };

std::string_view size_class_name(SizeClass s);
SizeClass parse_size_class(std::string_view s);

struct NetConfig {
    int patch_len = synthpg::kPatchLen;
    int d_model = 16;
    int n_layers = 1;
    int n_heads = 2;
    int ffn_dim = 64;
    int context_patches = 4;
    SizeClass size_class = SizeClass::XS;
    double recon_weight = 0.1;
    double hr_center = 80.0;
    double hr_scale = 40.0;

    int head_dim() const { return d_model / n_heads; }
    int seq_len() const { return patch_len * context_patches; }
    void validate() const;

    static NetConfig for_size(SizeClass s, int context_patches = 4);
};

struct LayerParams {
    Mat ln1_g, ln1_b;
    Mat wq, bq, wk, bk, wv, bv, wo, bo;
    Mat ln2_g, ln2_b;
    Mat w1, b1, w2, b2;
};

/// All trainable tensors. Weights are stored (in x out) so that y = x W + b; biases and norm gains are 1 x n.
struct NetParams {
    Mat embed_w, embed_b;
    std::vector<LayerParams> layers;
    Mat lnf_g, lnf_b;
    Mat hr_w, hr_b;
    Mat rec_w, rec_b;
};

struct NamedTensor {
    std::string name;
    Mat* value;
};

struct ConstNamedTensor {
    std::string name;
    const Mat* value;
};

/// Stable traversal order; names look like "layers.0.wq".
std::vector<NamedTensor> named_tensors(NetParams& p);
std::vector<ConstNamedTensor> named_tensors(const NetParams& p);

NetParams zeros_like(const NetParams& p);
std::size_t parameter_count(const NetConfig& cfg);
std::size_t parameter_count(const NetParams& p);
bool all_finite(const NetParams& p);
bool bitwise_equal(const NetParams& a, const NetParams& b);

struct TinyPpgNet {
    NetConfig config;
    NetParams params;
};

TinyPpgNet init_net(const NetConfig& cfg, std::uint64_t seed);

/// Packs record signals into a (batch x seq_len) matrix. Throws Invalid on a length mismatch.
Mat batch_signals(std::span<const synthpg::PpgRecord* const> records, const NetConfig& cfg);
Mat batch_signals(std::span<const synthpg::PpgRecord> records, const NetConfig& cfg);

/// Rotates consecutive (even, odd) pairs of `vec` by position * 10000^(-2j/len). `inverse` applies the
/// transpose rotation.
void rotary_encode(std::span<double> vec, int position, bool inverse = false);

struct LayerCache {
    Mat x_in;
    Mat xhat1, h1;
    Vec rstd1;
    Mat q, k, v;    // q and k after rotation
    Mat probs;      // (batch * heads * T) x T
    Mat att;        // concatenated head outputs before the output projection
    Mat x_mid;
    Mat xhat2, h2;
    Vec rstd2;
    Mat a1, g1;
};

struct ForwardCache {
    int batch = 0;
    Mat patches;  // (batch * T) x patch_len
    std::vector<LayerCache> layers;
    Mat xhatf;
    Vec rstdf;
    Mat z;  // final normalized token features
};

struct ForwardOutput {
    Vec hr_pred;        // bpm
    Vec hr_raw;         // head output before de-normalization
    Mat recon;          // (batch * T) x (2 * patch_len): mu then log b per sample
    Mat penultimate;    // batch x d_model, mean-pooled normalized features
};

ForwardOutput forward(const TinyPpgNet& net, const Mat& signals, ForwardCache* cache = nullptr);

/// Upstream gradients fed to `backward`.
struct OutputGrads {
    Vec d_hr_raw;       // dL/d hr_raw, one per record
    Mat d_recon;        // same shape as ForwardOutput::recon; may be empty
    Mat d_penultimate;  // extra dL/d penultimate (adversarial path); may be empty
};

NetParams backward(const TinyPpgNet& net, const ForwardCache& cache, const OutputGrads& grads);

}  // namespace fairtune::nnet
