#pragma once

#include <string>
#include <vector>

#include "layoutfuse/attention.hpp"

namespace lf {

// Noise schedule: linear betas, alpha_bar as the running product of (1-beta).
struct Schedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] for t in 1..T
    std::vector<double> alpha_bar;  // alpha_bar[t-1], strictly decreasing

    double alpha_bar_at(int t) const;  // alpha_bar_0 defined as 1
};

Schedule make_schedule(int T, double beta_start, double beta_end);

// z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps
LatentGrid forward_diffuse(const LatentGrid& z0, int t, const LatentGrid& eps,
                           const Schedule& schedule);

// Deterministic reverse update (eta = 0): reconstruct the x0 estimate, then
// re-noise to t_prev.
LatentGrid ddim_step(const LatentGrid& z_t, const LatentGrid& eps_hat, int t, int t_prev,
                     const Schedule& schedule);

// Uniformly strided descending timestep subsequence of 1..T with `steps`
// entries; the final reverse update goes to 0.
std::vector<int> sample_timesteps(int T, int steps);

struct MlpWeights {
    Matrix w1;  // d_model x d_hidden
    std::vector<double> b1;
    Matrix w2;  // d_hidden x d_model
    std::vector<double> b2;
};

// Flat attention stack standing in for the denoising network: patch embed,
// additive time embedding, then per layer a decoupled attention block and a
// pointwise tanh MLP, both with residual connections.
struct ToyModel {
    AttentionConfig config;
    int grid_c = 3;
    int d_hidden = 64;
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    BlockWeights blocks;
    std::vector<MlpWeights> mlps;  // per layer
    Matrix time_embed;             // T x d_model
    Matrix patch_w;                // C x d_model
    std::vector<double> patch_b;   // d_model
    Matrix unembed_w;              // d_model x C
    std::vector<double> unembed_b; // C

    AdapterWeights adapter;
    Matrix scene;          // 1 x d_cond prompt embedding ("prompt.scene")
    Matrix subject_table;  // K x d_cond, row i belongs to subject_ids[i]
    std::vector<std::string> subject_ids;          // sorted
    std::vector<std::array<double, 3>> palette;    // per subject color, value space
    std::array<double, 3> background{0.0, 0.0, 0.0};

    size_t parameter_count() const;

    void save(TensorContainer& c) const;
    static ToyModel load(const TensorContainer& c);

    // Applies fn to every trainable parameter group, in a fixed order shared
    // by gradients, SGD updates and the flattened finite-difference view.
    void visit_params(const std::function<void(std::vector<double>&)>& fn);
    void visit_params_const(const std::function<void(const std::vector<double>&)>& fn) const;

    std::vector<double> flatten_params() const;
    void unflatten_params(const std::vector<double>& theta);

    static ToyModel zeros_like(const ToyModel& m);
};

LatentGrid denoiser_forward(const LatentGrid& z_t, int t, const Matrix& c_t,
                            const std::vector<SubjectCondition>& subjects, Mode mode,
                            const ToyModel& model, const AttentionConfig& cfg,
                            FlopCounter* fc = nullptr, AttnTrace* trace = nullptr);

struct GenerationResult {
    LatentGrid z0;
    LatentGrid image;  // identity codec: the latent is the image
    std::vector<int> timesteps;
};

GenerationResult sample(const LayoutSpec& spec, const ToyModel& model, const Schedule& schedule,
                        AttnTrace* trace = nullptr);

// One training item. The scene embedding is global; subject < 0 means a pure
// text-conditioned item. Training items use full-canvas global-sum image
// attention, so layout composition is never trained.
struct TrainExample {
    LatentGrid z0;
    int t = 1;
    LatentGrid eps;
    int subject = -1;
};

struct LossGrad {
    double loss = 0.0;
    ToyModel grad;  // same shapes as the model, gradient values
};

double rec_loss(const ToyModel& model, const std::vector<TrainExample>& batch);
LossGrad rec_loss_with_grad(const ToyModel& model, const std::vector<TrainExample>& batch);

struct TrainConfig {
    int grid_h = 16, grid_w = 16, grid_c = 3;
    int layers = 2, heads = 2, d_model = 32, d_head = 16, d_cond = 8, d_hidden = 64;
    int schedule_steps = 200;
    double beta_start = 1e-4, beta_end = 0.02;
    int subject_count = 4;         // palette size K (max 6)
    int epochs = 30;
    int batches_per_epoch = 40;
    int batch_size = 8;
    double learning_rate = 0.01;
    // Blob side as a fraction of the canvas side. Large blobs keep the
    // per-pixel color density inside a box above the 2-D site-percolation
    // threshold, so sampled subjects form solid connected regions instead of
    // speckle.
    double blob_min_frac = 0.85;
    double blob_max_frac = 1.0;
    uint64_t seed = 0;

    void validate() const;
};

// Built-in palette in value space ([-1,1] per channel), id -> color.
const std::vector<std::pair<std::string, std::array<double, 3>>>& toy_palette();

// First k palette entries in sorted-id order: the subject index space shared
// by the subject table, the training sampler and the persisted container.
std::vector<std::pair<std::string, std::array<double, 3>>> sorted_toy_palette(int k);

// One synthetic canvas: gray background, one axis-aligned colored blob.
TrainExample make_toy_example(const TrainConfig& cfg, const Schedule& schedule, Rng& rng);

struct TrainResult {
    ToyModel model;
    std::vector<double> epoch_loss;
    double holdout_loss_initial = 0.0;
    double holdout_loss_final = 0.0;
};

ToyModel init_toy_model(const TrainConfig& cfg, Rng& rng);

// Plain gradient descent with a fixed step size. log receives one line per
// epoch; pass nullptr to train quietly.
TrainResult train_toy(const TrainConfig& cfg,
                      const std::function<void(const std::string&)>& log = nullptr);

}  // namespace lf
