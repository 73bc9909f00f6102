#include <algorithm>
#include <cmath>
#include <cstring>

#include "layoutfuse/diffusion.hpp"

namespace lf {

namespace {

// a' * b for row-major operands: (n x r)' * (n x c) -> r x c.
Matrix at_b(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        const double* brow = b.row_ptr(i);
        for (int r = 0; r < a.cols; ++r) {
            const double av = arow[r];
            double* orow = out.row_ptr(r);
            for (int c = 0; c < b.cols; ++c) orow[c] += av * brow[c];
        }
    }
    return out;
}

void add_into(Matrix& dst, const Matrix& src, double scale = 1.0) {
    for (size_t i = 0; i < dst.values.size(); ++i) dst.values[i] += scale * src.values[i];
}

void add_into_vec(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::vector<double> colsum(const Matrix& m) {
    std::vector<double> s(static_cast<size_t>(m.cols), 0.0);
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.row_ptr(r);
        for (int c = 0; c < m.cols; ++c) s[static_cast<size_t>(c)] += row[c];
    }
    return s;
}

// Given A = softmax(S) row-wise and dL/dA, returns dL/dS.
Matrix softmax_backward(const Matrix& attn, const Matrix& d_attn) {
    Matrix out(attn.rows, attn.cols);
    for (int r = 0; r < attn.rows; ++r) {
        const double* a = attn.row_ptr(r);
        const double* da = d_attn.row_ptr(r);
        double dot = 0.0;
        for (int c = 0; c < attn.cols; ++c) dot += a[c] * da[c];
        double* o = out.row_ptr(r);
        for (int c = 0; c < attn.cols; ++c) o[c] = a[c] * (da[c] - dot);
    }
    return out;
}

Matrix slice_cols(const Matrix& m, int c0, int ncols) {
    Matrix out(m.rows, ncols);
    for (int r = 0; r < m.rows; ++r) {
        std::memcpy(out.row_ptr(r), m.row_ptr(r) + c0, sizeof(double) * static_cast<size_t>(ncols));
    }
    return out;
}

void add_row_broadcast(Matrix& m, const double* row) {
    for (int r = 0; r < m.rows; ++r) {
        double* p = m.row_ptr(r);
        for (int c = 0; c < m.cols; ++c) p[c] += row[c];
    }
}

struct HeadCache {
    Matrix q;             // N x dh
    Matrix kt, vt, at;    // text stream
    Matrix kj, vj, aj;    // image stream (single training subject)
};

struct LayerCache {
    Matrix x_in;     // block input
    Matrix streams;  // pre-output-projection Z_text + s*Z_image
    Matrix x_mid;    // after the attention residual, MLP input
    Matrix act;      // tanh hidden activations
    bool image_on = false;
    std::vector<HeadCache> heads;
};

struct ItemCache {
    Matrix z_flat;
    Matrix x_final;
    Matrix yhat;
    std::vector<LayerCache> layers;
};

// Training-path forward. Matches denoiser_forward bit for bit (same primitive
// ops in the same order) while keeping every intermediate needed by the
// backward pass. The image stream is the full-canvas global-sum used in
// training; layout modes never reach this path.
void forward_cached(const ToyModel& model, const LatentGrid& z_t, int t, const Matrix& c_j,
                    bool has_subject, ItemCache& cache) {
    const AttentionConfig& cfg = model.config;
    const double s = cfg.image_scale;
    cache.z_flat = z_t.to_matrix();

    Matrix x = matmul(cache.z_flat, model.patch_w);
    add_row_broadcast(x, model.patch_b.data());
    add_row_broadcast(x, model.time_embed.row_ptr(t - 1));

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    cache.layers.resize(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        lc.x_in = x;
        lc.image_on = has_subject && cfg.layer_applies(l) && cfg.step_applies(t) && s != 0.0;
        lc.streams = Matrix(x.rows, cfg.d_model);
        lc.heads.resize(static_cast<size_t>(cfg.heads));
        const LayerWeights& lw = model.blocks.layer(l);
        for (int h = 0; h < cfg.heads; ++h) {
            HeadCache& hc = lc.heads[static_cast<size_t>(h)];
            const HeadWeights& hw = lw.heads[static_cast<size_t>(h)];
            hc.q = matmul(x, hw.wq);
            hc.kt = matmul(model.scene, hw.wk);
            hc.vt = matmul(model.scene, hw.wv);
            Matrix scores = matmul_bt(hc.q, hc.kt);
            for (double& v : scores.values) v *= inv_sqrt_d;
            hc.at = softmax_rows(scores);
            Matrix head_out = matmul(hc.at, hc.vt);
            if (lc.image_on) {
                const AdapterHeadWeights& aw = model.adapter.head(l, h);
                hc.kj = matmul(c_j, aw.wk);
                hc.vj = matmul(c_j, aw.wv);
                Matrix img_scores = matmul_bt(hc.q, hc.kj);
                for (double& v : img_scores.values) v *= inv_sqrt_d;
                hc.aj = softmax_rows(img_scores);
                const Matrix z_img = matmul(hc.aj, hc.vj);
                add_into(head_out, z_img, s);
            }
            for (int r = 0; r < head_out.rows; ++r) {
                std::memcpy(lc.streams.row_ptr(r) + h * cfg.d_head, head_out.row_ptr(r),
                            sizeof(double) * static_cast<size_t>(cfg.d_head));
            }
        }
        const Matrix block = matmul(lc.streams, lw.wo);
        lc.x_mid = x;
        add_into(lc.x_mid, block);

        const MlpWeights& mlp = model.mlps[static_cast<size_t>(l)];
        Matrix u = matmul(lc.x_mid, mlp.w1);
        add_row_broadcast(u, mlp.b1.data());
        for (double& v : u.values) v = std::tanh(v);
        lc.act = std::move(u);
        Matrix m_out = matmul(lc.act, mlp.w2);
        add_row_broadcast(m_out, mlp.b2.data());
        x = lc.x_mid;
        add_into(x, m_out);
    }
    cache.x_final = x;
    cache.yhat = matmul(x, model.unembed_w);
    add_row_broadcast(cache.yhat, model.unembed_b.data());
}

void backward_item(const ToyModel& model, const ItemCache& cache, const Matrix& d_yhat, int t,
                   int subject, const Matrix& c_j, ToyModel& grad) {
    const AttentionConfig& cfg = model.config;
    const double s = cfg.image_scale;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));

    add_into(grad.unembed_w, at_b(cache.x_final, d_yhat));
    add_into_vec(grad.unembed_b, colsum(d_yhat));
    Matrix dx = matmul_bt(d_yhat, model.unembed_w);

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const LayerWeights& lw = model.blocks.layer(l);
        const MlpWeights& mlp = model.mlps[static_cast<size_t>(l)];
        MlpWeights& gmlp = grad.mlps[static_cast<size_t>(l)];
        LayerWeights& glw = grad.blocks.layers[static_cast<size_t>(l)];

        // MLP residual: x_next = x_mid + mlp(x_mid)
        const Matrix& d_mout = dx;
        add_into(gmlp.w2, at_b(lc.act, d_mout));
        add_into_vec(gmlp.b2, colsum(d_mout));
        Matrix d_act = matmul_bt(d_mout, mlp.w2);
        Matrix d_u = std::move(d_act);
        for (size_t i = 0; i < d_u.values.size(); ++i) {
            const double a = lc.act.values[i];
            d_u.values[i] *= 1.0 - a * a;
        }
        add_into(gmlp.w1, at_b(lc.x_mid, d_u));
        add_into_vec(gmlp.b1, colsum(d_u));
        Matrix d_xmid = matmul_bt(d_u, mlp.w1);
        add_into(d_xmid, dx);

        // Attention residual: x_mid = x_in + streams * wo
        const Matrix& d_block = d_xmid;
        add_into(glw.wo, at_b(lc.streams, d_block));
        const Matrix d_streams = matmul_bt(d_block, lw.wo);
        dx = d_xmid;

        for (int h = 0; h < cfg.heads; ++h) {
            const HeadCache& hc = lc.heads[static_cast<size_t>(h)];
            const HeadWeights& hw = lw.heads[static_cast<size_t>(h)];
            HeadWeights& ghw = glw.heads[static_cast<size_t>(h)];
            const Matrix d_head = slice_cols(d_streams, h * cfg.d_head, cfg.d_head);

            // Text stream: z = softmax(q kt'/sqrt(d)) vt
            Matrix d_at = matmul_bt(d_head, hc.vt);
            Matrix d_vt = at_b(hc.at, d_head);
            add_into(ghw.wv, at_b(model.scene, d_vt));
            Matrix d_st = softmax_backward(hc.at, d_at);
            Matrix d_q = matmul(d_st, hc.kt);
            for (double& v : d_q.values) v *= inv_sqrt_d;
            Matrix d_kt = at_b(d_st, hc.q);
            for (double& v : d_kt.values) v *= inv_sqrt_d;
            add_into(ghw.wk, at_b(model.scene, d_kt));
            add_into(grad.scene, matmul_bt(d_kt, hw.wk));
            add_into(grad.scene, matmul_bt(d_vt, hw.wv));

            if (lc.image_on) {
                const AdapterHeadWeights& aw = model.adapter.head(l, h);
                AdapterHeadWeights& gaw =
                    grad.adapter.layers[static_cast<size_t>(l)][static_cast<size_t>(h)];
                Matrix d_zj = d_head;
                for (double& v : d_zj.values) v *= s;
                Matrix d_aj = matmul_bt(d_zj, hc.vj);
                Matrix d_vj = at_b(hc.aj, d_zj);
                Matrix d_sj = softmax_backward(hc.aj, d_aj);
                Matrix d_qj = matmul(d_sj, hc.kj);
                for (double& v : d_qj.values) v *= inv_sqrt_d;
                Matrix d_kj = at_b(d_sj, hc.q);
                for (double& v : d_kj.values) v *= inv_sqrt_d;
                add_into(gaw.wk, at_b(c_j, d_kj));
                add_into(gaw.wv, at_b(c_j, d_vj));
                Matrix d_cj = matmul_bt(d_kj, aw.wk);
                add_into(d_cj, matmul_bt(d_vj, aw.wv));
                for (int d = 0; d < cfg.d_cond; ++d) {
                    grad.subject_table.at(subject, d) += d_cj.at(0, d);
                }
                add_into(d_q, d_qj);
            }

            add_into(ghw.wq, at_b(lc.x_in, d_q));
            add_into(dx, matmul_bt(d_q, hw.wq));
        }
    }

    // x = z * patch_w + patch_b + time_embed[t-1] (broadcast rows)
    const std::vector<double> d_embed = colsum(dx);
    for (int d = 0; d < cfg.d_model; ++d) {
        grad.time_embed.at(t - 1, d) += d_embed[static_cast<size_t>(d)];
    }
    add_into(grad.patch_w, at_b(cache.z_flat, dx));
    add_into_vec(grad.patch_b, d_embed);
}

double item_loss_and_seed(const Matrix& yhat, const LatentGrid& eps, size_t batch_size,
                          Matrix* d_yhat) {
    const double norm = 1.0 / (static_cast<double>(yhat.rows) * yhat.cols);
    double loss = 0.0;
    if (d_yhat) *d_yhat = Matrix(yhat.rows, yhat.cols);
    for (size_t i = 0; i < yhat.values.size(); ++i) {
        const double diff = yhat.values[i] - eps.values[i];
        loss += diff * diff;
        if (d_yhat) {
            d_yhat->values[i] = 2.0 * diff * norm / static_cast<double>(batch_size);
        }
    }
    return loss * norm;
}

Matrix subject_row(const ToyModel& model, int subject) {
    if (subject < 0) return Matrix();
    if (subject >= model.subject_table.rows) {
        throw SpecError("rec_loss: subject index out of range");
    }
    return model.subject_table.row(subject);
}

}  // namespace

double rec_loss(const ToyModel& model, const std::vector<TrainExample>& batch) {
    if (batch.empty()) throw SpecError("rec_loss: empty batch");
    const Schedule schedule = make_schedule(model.T, model.beta_start, model.beta_end);
    double total = 0.0;
    for (const TrainExample& ex : batch) {
        const LatentGrid z_t = forward_diffuse(ex.z0, ex.t, ex.eps, schedule);
        const Matrix c_j = subject_row(model, ex.subject);
        ItemCache cache;
        forward_cached(model, z_t, ex.t, c_j, ex.subject >= 0, cache);
        total += item_loss_and_seed(cache.yhat, ex.eps, batch.size(), nullptr);
    }
    const double loss = total / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw NumericError("rec_loss: non-finite loss");
    return loss;
}

LossGrad rec_loss_with_grad(const ToyModel& model, const std::vector<TrainExample>& batch) {
    if (batch.empty()) throw SpecError("rec_loss: empty batch");
    const Schedule schedule = make_schedule(model.T, model.beta_start, model.beta_end);
    LossGrad out;
    out.grad = ToyModel::zeros_like(model);
    double total = 0.0;
    for (const TrainExample& ex : batch) {
        const LatentGrid z_t = forward_diffuse(ex.z0, ex.t, ex.eps, schedule);
        const Matrix c_j = subject_row(model, ex.subject);
        ItemCache cache;
        forward_cached(model, z_t, ex.t, c_j, ex.subject >= 0, cache);
        Matrix d_yhat;
        total += item_loss_and_seed(cache.yhat, ex.eps, batch.size(), &d_yhat);
        backward_item(model, cache, d_yhat, ex.t, ex.subject, c_j, out.grad);
    }
    out.loss = total / static_cast<double>(batch.size());
    if (!std::isfinite(out.loss)) throw NumericError("rec_loss: non-finite loss");
    return out;
}

void TrainConfig::validate() const {
    if (grid_h < 2 || grid_w < 2 || grid_c != 3) {
        throw SpecError("train config: grid must be at least 2x2 with 3 channels");
    }
    if (subject_count < 1 || subject_count > static_cast<int>(toy_palette().size())) {
        throw SpecError("train config: subject_count must be in [1, " +
                        std::to_string(toy_palette().size()) + "]");
    }
    if (epochs < 0 || batches_per_epoch < 1 || batch_size < 1) {
        throw SpecError("train config: bad epoch/batch settings");
    }
    if (!(blob_min_frac > 0.0) || !(blob_min_frac <= blob_max_frac) || blob_max_frac > 1.0) {
        throw SpecError("train config: bad blob size range");
    }
    if (!(learning_rate > 0.0)) throw SpecError("train config: learning rate must be > 0");
}

const std::vector<std::pair<std::string, std::array<double, 3>>>& toy_palette() {
    static const std::vector<std::pair<std::string, std::array<double, 3>>> palette = {
        {"red", {1.0, -1.0, -1.0}},    {"green", {-1.0, 1.0, -1.0}},
        {"blue", {-1.0, -1.0, 1.0}},   {"yellow", {1.0, 1.0, -1.0}},
        {"magenta", {1.0, -1.0, 1.0}}, {"cyan", {-1.0, 1.0, 1.0}},
    };
    return palette;
}

std::vector<std::pair<std::string, std::array<double, 3>>> sorted_toy_palette(int k) {
    std::vector<std::pair<std::string, std::array<double, 3>>> entries(
        toy_palette().begin(), toy_palette().begin() + k);
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return entries;
}

TrainExample make_toy_example(const TrainConfig& cfg, const Schedule& schedule, Rng& rng) {
    TrainExample ex;
    const int k = static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.subject_count)));
    const auto& color = sorted_toy_palette(cfg.subject_count)[static_cast<size_t>(k)].second;

    const int min_h = std::max(1, static_cast<int>(std::floor(cfg.blob_min_frac * cfg.grid_h)));
    const int max_h = std::max(min_h, static_cast<int>(std::floor(cfg.blob_max_frac * cfg.grid_h)));
    const int min_w = std::max(1, static_cast<int>(std::floor(cfg.blob_min_frac * cfg.grid_w)));
    const int max_w = std::max(min_w, static_cast<int>(std::floor(cfg.blob_max_frac * cfg.grid_w)));
    const int side_h = min_h + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_h - min_h + 1)));
    const int side_w = min_w + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_w - min_w + 1)));
    const int y0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.grid_h - side_h + 1)));
    const int x0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.grid_w - side_w + 1)));

    ex.z0 = LatentGrid(cfg.grid_h, cfg.grid_w, cfg.grid_c);  // gray background = 0
    for (int y = y0; y < y0 + side_h; ++y) {
        for (int x = x0; x < x0 + side_w; ++x) {
            for (int ch = 0; ch < 3; ++ch) ex.z0.at(y, x, ch) = color[static_cast<size_t>(ch)];
        }
    }
    ex.t = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(schedule.T)));
    ex.eps = LatentGrid(cfg.grid_h, cfg.grid_w, cfg.grid_c);
    for (double& v : ex.eps.values) v = rng.next_gaussian();
    ex.subject = k;
    return ex;
}

ToyModel init_toy_model(const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    ToyModel m;
    m.config.layers = cfg.layers;
    m.config.heads = cfg.heads;
    m.config.d_model = cfg.d_model;
    m.config.d_head = cfg.d_head;
    m.config.d_cond = cfg.d_cond;
    m.config.validate();
    m.grid_c = cfg.grid_c;
    m.d_hidden = cfg.d_hidden;
    m.T = cfg.schedule_steps;
    m.beta_start = cfg.beta_start;
    m.beta_end = cfg.beta_end;

    const double patch_scale = 1.0 / std::sqrt(static_cast<double>(cfg.grid_c));
    const double model_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double cond_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_cond));
    const double hidden_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_hidden));

    m.patch_w = Matrix::random_gaussian(cfg.grid_c, cfg.d_model, rng, patch_scale);
    m.patch_b.assign(static_cast<size_t>(cfg.d_model), 0.0);
    m.time_embed = Matrix::random_gaussian(cfg.schedule_steps, cfg.d_model, rng, 0.3);
    m.blocks = BlockWeights::random(m.config, rng, model_scale);
    // Key/value projections act on d_cond-sized embeddings.
    for (auto& layer : m.blocks.layers) {
        for (auto& head : layer.heads) {
            head.wk = Matrix::random_gaussian(cfg.d_cond, cfg.d_head, rng, cond_scale);
            head.wv = Matrix::random_gaussian(cfg.d_cond, cfg.d_head, rng, cond_scale);
        }
    }
    for (int l = 0; l < cfg.layers; ++l) {
        MlpWeights mlp;
        mlp.w1 = Matrix::random_gaussian(cfg.d_model, cfg.d_hidden, rng, model_scale);
        mlp.b1.assign(static_cast<size_t>(cfg.d_hidden), 0.0);
        mlp.w2 = Matrix::random_gaussian(cfg.d_hidden, cfg.d_model, rng, hidden_scale);
        mlp.b2.assign(static_cast<size_t>(cfg.d_model), 0.0);
        m.mlps.push_back(std::move(mlp));
    }
    m.unembed_w = Matrix::random_gaussian(cfg.d_model, cfg.grid_c, rng, model_scale);
    m.unembed_b.assign(static_cast<size_t>(cfg.grid_c), 0.0);
    m.adapter = AdapterWeights::random(cfg.layers, cfg.heads, cfg.d_cond, cfg.d_head, rng,
                                       cond_scale);
    m.scene = Matrix::random_gaussian(1, cfg.d_cond, rng, 1.0);
    m.subject_table = Matrix::random_gaussian(cfg.subject_count, cfg.d_cond, rng, 1.0);

    // Sorted-id order throughout: table rows, ids and palette stay aligned
    // with the sorted container entry names.
    for (const auto& [id, color] : sorted_toy_palette(cfg.subject_count)) {
        m.subject_ids.push_back(id);
        m.palette.push_back(color);
    }
    return m;
}

static void sgd_step(ToyModel& model, ToyModel& grad, double lr) {
    std::vector<std::vector<double>*> params;
    model.visit_params([&](std::vector<double>& v) { params.push_back(&v); });
    size_t idx = 0;
    grad.visit_params([&](std::vector<double>& g) {
        std::vector<double>& p = *params[idx++];
        for (size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    });
}

TrainResult train_toy(const TrainConfig& cfg,
                      const std::function<void(const std::string&)>& log) {
    cfg.validate();
    const Schedule schedule = make_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);

    Rng init_rng(cfg.seed);
    TrainResult result;
    result.model = init_toy_model(cfg, init_rng);

    // Hold-out batch from an independent stream, never trained on.
    Rng holdout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<TrainExample> holdout;
    for (int i = 0; i < 64; ++i) holdout.push_back(make_toy_example(cfg, schedule, holdout_rng));
    result.holdout_loss_initial = rec_loss(result.model, holdout);

    Rng data_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int b = 0; b < cfg.batches_per_epoch; ++b) {
            std::vector<TrainExample> batch;
            batch.reserve(static_cast<size_t>(cfg.batch_size));
            for (int i = 0; i < cfg.batch_size; ++i) {
                batch.push_back(make_toy_example(cfg, schedule, data_rng));
            }
            LossGrad lg;
            try {
                lg = rec_loss_with_grad(result.model, batch);
            } catch (const NumericError& e) {
                throw NumericError("train_toy: diverged at epoch " + std::to_string(epoch + 1) +
                                   " batch " + std::to_string(b + 1) + " (" + e.what() +
                                   "); last epoch losses: " +
                                   (result.epoch_loss.empty()
                                        ? std::string("none")
                                        : std::to_string(result.epoch_loss.back())));
            }
            if (!std::isfinite(lg.loss)) {
                throw NumericError("train_toy: loss diverged at epoch " + std::to_string(epoch + 1));
            }
            sgd_step(result.model, lg.grad, cfg.learning_rate);
            epoch_loss += lg.loss;
        }
        epoch_loss /= cfg.batches_per_epoch;
        result.epoch_loss.push_back(epoch_loss);
        if (log) {
            log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                " loss " + std::to_string(epoch_loss));
        }
    }

    result.holdout_loss_final = rec_loss(result.model, holdout);
    return result;
}

}  // namespace lf
