#include "layoutfuse/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace lf {

double Schedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > T) throw SpecError("schedule: timestep " + std::to_string(t) + " out of range");
    return alpha_bar[static_cast<size_t>(t - 1)];
}

Schedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw SpecError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw SpecError("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    Schedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
        const double beta = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<size_t>(t - 1)] = beta;
        prod *= 1.0 - beta;
        s.alpha_bar[static_cast<size_t>(t - 1)] = prod;
    }
    return s;
}

LatentGrid forward_diffuse(const LatentGrid& z0, int t, const LatentGrid& eps,
                           const Schedule& schedule) {
    if (t < 1 || t > schedule.T) throw SpecError("forward_diffuse: t out of range");
    if (eps.h != z0.h || eps.w != z0.w || eps.c != z0.c) {
        throw SpecError("forward_diffuse: eps shape mismatch");
    }
    const double ab = schedule.alpha_bar_at(t);
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    LatentGrid out(z0.h, z0.w, z0.c);
    for (size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = signal * z0.values[i] + noise * eps.values[i];
    }
    return out;
}

LatentGrid ddim_step(const LatentGrid& z_t, const LatentGrid& eps_hat, int t, int t_prev,
                     const Schedule& schedule) {
    if (!(t > t_prev) || t_prev < 0) throw SpecError("ddim_step: need t > t_prev >= 0");
    const double ab_t = schedule.alpha_bar_at(t);
    const double ab_prev = schedule.alpha_bar_at(t_prev);
    const double noise_t = std::sqrt(1.0 - ab_t);
    const double inv_signal_t = 1.0 / std::sqrt(ab_t);
    const double signal_prev = std::sqrt(ab_prev);
    const double noise_prev = std::sqrt(1.0 - ab_prev);
    LatentGrid out(z_t.h, z_t.w, z_t.c);
    for (size_t i = 0; i < out.values.size(); ++i) {
        const double x0_hat = (z_t.values[i] - noise_t * eps_hat.values[i]) * inv_signal_t;
        out.values[i] = signal_prev * x0_hat + noise_prev * eps_hat.values[i];
    }
    return out;
}

std::vector<int> sample_timesteps(int T, int steps) {
    if (steps < 1) throw SpecError("sample: steps must be >= 1");
    if (steps > T) throw SpecError("sample: steps must be <= schedule T");
    std::vector<int> ts;
    ts.reserve(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const int t = static_cast<int>(
            std::ceil(static_cast<double>(T) * (steps - i) / static_cast<double>(steps)));
        ts.push_back(t);
    }
    // Strictly decreasing by construction for steps <= T.
    for (size_t i = 1; i < ts.size(); ++i) {
        if (ts[i] >= ts[i - 1]) throw NumericError("sample: non-monotone timestep subsequence");
    }
    return ts;
}

size_t ToyModel::parameter_count() const {
    size_t n = 0;
    visit_params_const([&](const std::vector<double>& v) { n += v.size(); });
    return n;
}

void ToyModel::visit_params(const std::function<void(std::vector<double>&)>& fn) {
    fn(patch_w.values);
    fn(patch_b);
    fn(time_embed.values);
    for (size_t l = 0; l < blocks.layers.size(); ++l) {
        LayerWeights& lw = blocks.layers[l];
        for (HeadWeights& hw : lw.heads) {
            fn(hw.wq.values);
            fn(hw.wk.values);
            fn(hw.wv.values);
        }
        fn(lw.wo.values);
        MlpWeights& mlp = mlps[l];
        fn(mlp.w1.values);
        fn(mlp.b1);
        fn(mlp.w2.values);
        fn(mlp.b2);
    }
    fn(unembed_w.values);
    fn(unembed_b);
    for (auto& layer : adapter.layers) {
        for (AdapterHeadWeights& hw : layer) {
            fn(hw.wk.values);
            fn(hw.wv.values);
        }
    }
    fn(scene.values);
    fn(subject_table.values);
}

void ToyModel::visit_params_const(const std::function<void(const std::vector<double>&)>& fn) const {
    const_cast<ToyModel*>(this)->visit_params(
        [&](std::vector<double>& v) { fn(const_cast<const std::vector<double>&>(v)); });
}

std::vector<double> ToyModel::flatten_params() const {
    std::vector<double> theta;
    visit_params_const([&](const std::vector<double>& v) {
        theta.insert(theta.end(), v.begin(), v.end());
    });
    return theta;
}

void ToyModel::unflatten_params(const std::vector<double>& theta) {
    size_t pos = 0;
    visit_params([&](std::vector<double>& v) {
        if (pos + v.size() > theta.size()) throw SpecError("unflatten_params: size mismatch");
        std::copy(theta.begin() + static_cast<long>(pos),
                  theta.begin() + static_cast<long>(pos + v.size()), v.begin());
        pos += v.size();
    });
    if (pos != theta.size()) throw SpecError("unflatten_params: size mismatch");
}

ToyModel ToyModel::zeros_like(const ToyModel& m) {
    ToyModel z = m;
    z.visit_params([](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
    return z;
}

void ToyModel::save(TensorContainer& c) const {
    blocks.save(c);
    adapter.save(c);
    for (size_t l = 0; l < mlps.size(); ++l) {
        const std::string p = "denoiser.layer" + std::to_string(l) + ".mlp.";
        c.put_matrix(p + "w1", mlps[l].w1);
        c.put_vector(p + "b1", mlps[l].b1);
        c.put_matrix(p + "w2", mlps[l].w2);
        c.put_vector(p + "b2", mlps[l].b2);
    }
    c.put_matrix("denoiser.time_embed", time_embed);
    c.put_matrix("denoiser.patch.w", patch_w);
    c.put_vector("denoiser.patch.b", patch_b);
    c.put_matrix("denoiser.unembed.w", unembed_w);
    c.put_vector("denoiser.unembed.b", unembed_b);
    c.put_vector("denoiser.hparams",
                 {static_cast<double>(config.layers), static_cast<double>(config.heads),
                  static_cast<double>(config.d_model), static_cast<double>(config.d_head),
                  static_cast<double>(config.d_cond), static_cast<double>(d_hidden),
                  static_cast<double>(T), beta_start, beta_end, static_cast<double>(grid_c)});
    c.put_matrix("prompt.scene", scene);
    for (size_t i = 0; i < subject_ids.size(); ++i) {
        c.put_matrix("subject." + subject_ids[i], subject_table.row(static_cast<int>(i)));
        c.put_vector("palette." + subject_ids[i],
                     {palette[i][0], palette[i][1], palette[i][2]});
    }
    c.put_vector("palette.background", {background[0], background[1], background[2]});
}

ToyModel ToyModel::load(const TensorContainer& c) {
    const std::vector<double> hp = c.get_vector("denoiser.hparams");
    if (hp.size() != 10) throw IoError("container: bad denoiser.hparams");
    ToyModel m;
    m.config.layers = static_cast<int>(hp[0]);
    m.config.heads = static_cast<int>(hp[1]);
    m.config.d_model = static_cast<int>(hp[2]);
    m.config.d_head = static_cast<int>(hp[3]);
    m.config.d_cond = static_cast<int>(hp[4]);
    m.d_hidden = static_cast<int>(hp[5]);
    m.T = static_cast<int>(hp[6]);
    m.beta_start = hp[7];
    m.beta_end = hp[8];
    m.grid_c = static_cast<int>(hp[9]);
    m.config.validate();

    m.blocks = BlockWeights::load(c, m.config.layers, m.config.heads);
    m.adapter = AdapterWeights::load(c, m.config.layers, m.config.heads);
    for (int l = 0; l < m.config.layers; ++l) {
        const std::string p = "denoiser.layer" + std::to_string(l) + ".mlp.";
        MlpWeights mlp;
        mlp.w1 = c.get_matrix(p + "w1");
        mlp.b1 = c.get_vector(p + "b1");
        mlp.w2 = c.get_matrix(p + "w2");
        mlp.b2 = c.get_vector(p + "b2");
        m.mlps.push_back(std::move(mlp));
    }
    m.time_embed = c.get_matrix("denoiser.time_embed");
    m.patch_w = c.get_matrix("denoiser.patch.w");
    m.patch_b = c.get_vector("denoiser.patch.b");
    m.unembed_w = c.get_matrix("denoiser.unembed.w");
    m.unembed_b = c.get_vector("denoiser.unembed.b");
    m.scene = c.get_matrix("prompt.scene");

    // Subjects are keyed subject.{id}; names() is sorted, so the table rows
    // land in sorted-id order both on save and on load.
    for (const std::string& name : c.names()) {
        if (name.rfind("subject.", 0) == 0) {
            m.subject_ids.push_back(name.substr(8));
        }
    }
    m.subject_table = Matrix(static_cast<int>(m.subject_ids.size()), m.config.d_cond);
    for (size_t i = 0; i < m.subject_ids.size(); ++i) {
        const Matrix row = c.get_matrix("subject." + m.subject_ids[i]);
        if (row.cols != m.config.d_cond || row.rows != 1) {
            throw IoError("container: subject." + m.subject_ids[i] + " has wrong shape");
        }
        for (int d = 0; d < row.cols; ++d) m.subject_table.at(static_cast<int>(i), d) = row.at(0, d);
        const std::vector<double> col = c.get_vector("palette." + m.subject_ids[i]);
        if (col.size() != 3) throw IoError("container: bad palette entry");
        m.palette.push_back({col[0], col[1], col[2]});
    }
    const std::vector<double> bg = c.get_vector("palette.background");
    if (bg.size() != 3) throw IoError("container: bad palette.background");
    m.background = {bg[0], bg[1], bg[2]};
    return m;
}

static void add_row_broadcast(Matrix& m, const double* row) {
    for (int r = 0; r < m.rows; ++r) {
        double* p = m.row_ptr(r);
        for (int c = 0; c < m.cols; ++c) p[c] += row[c];
    }
}

LatentGrid denoiser_forward(const LatentGrid& z_t, int t, const Matrix& c_t,
                            const std::vector<SubjectCondition>& subjects, Mode mode,
                            const ToyModel& model, const AttentionConfig& cfg, FlopCounter* fc,
                            AttnTrace* trace) {
    if (t < 1 || t > model.T) throw SpecError("denoiser_forward: t out of range");
    if (z_t.c != model.grid_c) throw SpecError("denoiser_forward: channel mismatch");
    const Matrix z_flat = z_t.to_matrix();

    Matrix x = matmul(z_flat, model.patch_w);
    add_row_broadcast(x, model.patch_b.data());
    add_row_broadcast(x, model.time_embed.row_ptr(t - 1));

    for (int l = 0; l < cfg.layers; ++l) {
        const Matrix block = decoupled_block(x, c_t, subjects, mode, l, t, model.blocks,
                                             model.adapter, cfg, z_t.h, z_t.w, fc, trace);
        for (size_t i = 0; i < x.values.size(); ++i) x.values[i] += block.values[i];

        const MlpWeights& mlp = model.mlps[static_cast<size_t>(l)];
        Matrix u = matmul(x, mlp.w1);
        add_row_broadcast(u, mlp.b1.data());
        for (double& v : u.values) v = std::tanh(v);
        Matrix m_out = matmul(u, mlp.w2);
        add_row_broadcast(m_out, mlp.b2.data());
        for (size_t i = 0; i < x.values.size(); ++i) x.values[i] += m_out.values[i];
    }

    Matrix y = matmul(x, model.unembed_w);
    add_row_broadcast(y, model.unembed_b.data());
    if (!y.all_finite()) throw NumericError("denoiser_forward: non-finite output");
    return LatentGrid::from_matrix(y, z_t.h, z_t.w);
}

GenerationResult sample(const LayoutSpec& spec, const ToyModel& model, const Schedule& schedule,
                        AttnTrace* trace) {
    if (spec.steps > schedule.T) throw SpecError("sample: steps exceed schedule length");
    if (spec.grid_c != model.grid_c) throw SpecError("sample: grid channels do not match model");

    AttentionConfig cfg = model.config;
    cfg.image_scale = spec.image_scale;

    const std::vector<SubjectCondition> subjects = load_conditions(spec, model.adapter);
    const Matrix& c_t = spec.prompt_embedding;
    const Matrix c_null(c_t.rows, c_t.cols);  // zero embedding for the unconditional pass
    const std::vector<SubjectCondition> no_subjects;

    Rng rng(spec.seed);
    LatentGrid z(spec.grid_h, spec.grid_w, spec.grid_c);
    for (double& v : z.values) v = rng.next_gaussian();

    std::vector<int> ts = sample_timesteps(schedule.T, spec.steps);
    GenerationResult result;
    result.timesteps = ts;

    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        if (trace) trace->step = t;
        LatentGrid eps_hat = denoiser_forward(z, t, c_t, subjects, spec.mode, model, cfg, nullptr,
                                              trace);
        if (spec.guidance > 0.0) {
            // Decoupling applies to the conditional pass only; the
            // unconditional pass is a plain text-only forward on a zero
            // prompt embedding.
            const LatentGrid eps_uncond = denoiser_forward(z, t, c_null, no_subjects,
                                                           Mode::TextOnly, model, cfg, nullptr,
                                                           trace);
            for (size_t k = 0; k < eps_hat.values.size(); ++k) {
                eps_hat.values[k] = eps_uncond.values[k] +
                                    spec.guidance * (eps_hat.values[k] - eps_uncond.values[k]);
            }
        }
        z = ddim_step(z, eps_hat, t, t_prev, schedule);
        if (!z.all_finite()) {
            throw NumericError("sample: non-finite latent after step t=" + std::to_string(t));
        }
    }

    result.z0 = z;
    result.image = std::move(z);  // identity codec
    return result;
}

}  // namespace lf
