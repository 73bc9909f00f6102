#include <doctest.h>

#include <cmath>

#include "layoutfuse/attention.hpp"

using namespace lf;

namespace {

struct Fixture {
    AttentionConfig cfg;
    BlockWeights weights;
    AdapterWeights adapter;

    explicit Fixture(Rng& rng, int layers = 1, int heads = 2, int d_head = 4, int d_cond = 3) {
        cfg.layers = layers;
        cfg.heads = heads;
        cfg.d_head = d_head;
        cfg.d_model = heads * d_head;
        cfg.d_cond = d_cond;
        weights = BlockWeights::random(cfg, rng, 0.7);
        adapter = AdapterWeights::random(layers, heads, d_cond, d_head, rng, 0.7);
    }
};

SubjectCondition make_subject(const std::string& id, const NormBox& box, int priority, int tokens,
                              int d_cond, Rng& rng) {
    SubjectCondition s;
    s.id = id;
    s.embedding = Matrix::random_gaussian(tokens, d_cond, rng);
    s.box = box;
    s.priority = priority;
    return s;
}

std::vector<NormBox> boxes_of(const std::vector<SubjectCondition>& subjects) {
    std::vector<NormBox> out;
    for (const auto& s : subjects) out.push_back(s.box);
    return out;
}

std::vector<int> priorities_of(const std::vector<SubjectCondition>& subjects) {
    std::vector<int> out;
    for (const auto& s : subjects) out.push_back(s.priority);
    return out;
}

// Full-grid single-subject image attention assembled from the primitives;
// reference for the degenerate layouts.
Matrix plain_image_attention(const Matrix& z, const SubjectCondition& subject, int layer,
                             const Fixture& fx) {
    Matrix out(z.rows, fx.cfg.d_model);
    for (int h = 0; h < fx.cfg.heads; ++h) {
        const Matrix q = matmul(z, fx.weights.layer(layer).heads[static_cast<size_t>(h)].wq);
        const auto [k, v] = subject_kv(subject.embedding, layer, h, fx.adapter);
        const Matrix a = scaled_dot_attention(q, k, v);
        for (int r = 0; r < a.rows; ++r) {
            for (int c = 0; c < a.cols; ++c) out.at(r, h * fx.cfg.d_head + c) = a.at(r, c);
        }
    }
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double mx = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        mx = std::max(mx, std::fabs(a.values[i] - b.values[i]));
    }
    return mx;
}

Matrix query_concat(const Matrix& z, int layer, const Fixture& fx) {
    Matrix q_all(z.rows, fx.cfg.d_model);
    for (int h = 0; h < fx.cfg.heads; ++h) {
        const Matrix q = matmul(z, fx.weights.layer(layer).heads[static_cast<size_t>(h)].wq);
        for (int r = 0; r < q.rows; ++r) {
            for (int c = 0; c < q.cols; ++c) q_all.at(r, h * fx.cfg.d_head + c) = q.at(r, c);
        }
    }
    return q_all;
}

}  // namespace

TEST_CASE("text attention with a single token broadcasts its value row") {
    Rng rng(40);
    Fixture fx(rng);
    const Matrix z = Matrix::random_gaussian(16, fx.cfg.d_model, rng);
    const Matrix c_t = Matrix::random_gaussian(1, fx.cfg.d_cond, rng);
    const Matrix out = text_cross_attention(z, c_t, 0, fx.weights, fx.cfg);
    for (int h = 0; h < fx.cfg.heads; ++h) {
        const Matrix v = matmul(c_t, fx.weights.layer(0).heads[static_cast<size_t>(h)].wv);
        for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < fx.cfg.d_head; ++c) {
                CHECK(std::fabs(out.at(r, h * fx.cfg.d_head + c) - v.at(0, c)) < 1e-12);
            }
        }
    }
}

TEST_CASE("text attention with zero value projection is zero") {
    Rng rng(41);
    Fixture fx(rng);
    for (auto& layer : fx.weights.layers) {
        for (auto& head : layer.heads) head.wv = Matrix(fx.cfg.d_cond, fx.cfg.d_head);
    }
    const Matrix z = Matrix::random_gaussian(9, fx.cfg.d_model, rng);
    const Matrix c_t = Matrix::random_gaussian(4, fx.cfg.d_cond, rng);
    const Matrix out = text_cross_attention(z, c_t, 0, fx.weights, fx.cfg);
    for (double v : out.values) CHECK(v == 0.0);
}

TEST_CASE("text attention vs per-row oracle") {
    Rng rng(42);
    Fixture fx(rng);
    const Matrix z = Matrix::random_gaussian(6, fx.cfg.d_model, rng);
    const Matrix c_t = Matrix::random_gaussian(3, fx.cfg.d_cond, rng);
    const Matrix out = text_cross_attention(z, c_t, 0, fx.weights, fx.cfg);
    for (int h = 0; h < fx.cfg.heads; ++h) {
        const HeadWeights& hw = fx.weights.layer(0).heads[static_cast<size_t>(h)];
        const Matrix expected =
            scaled_dot_attention(matmul(z, hw.wq), matmul(c_t, hw.wk), matmul(c_t, hw.wv));
        for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < fx.cfg.d_head; ++c) {
                CHECK(std::fabs(out.at(r, h * fx.cfg.d_head + c) - expected.at(r, c)) < 1e-12);
            }
        }
    }
}

TEST_CASE("one full-canvas box reduces crop-and-merge to plain image attention") {
    Rng rng(43);
    Fixture fx(rng);
    const int grid = 4;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    const std::vector<SubjectCondition> subjects = {
        make_subject("a", {0, 0, 1, 1}, 0, 2, fx.cfg.d_cond, rng)};
    const RegionAssignment assign =
        build_region_assignment(boxes_of(subjects), priorities_of(subjects), grid, grid);
    const Matrix out =
        local_image_cross_attention(z, subjects, assign, 0, fx.weights, fx.adapter, fx.cfg);
    CHECK(max_abs_diff(out, plain_image_attention(z, subjects[0], 0, fx)) < 1e-12);
}

TEST_CASE("crop-and-merge: inside rows match the cropped oracle, outside rows equal Q") {
    Rng rng(44);
    Fixture fx(rng);
    const int grid = 4;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    // One box covering rows 0..2, cols 0..2.
    const std::vector<SubjectCondition> subjects = {
        make_subject("a", {0.0, 0.0, 0.5, 0.5}, 0, 3, fx.cfg.d_cond, rng)};
    const RegionAssignment assign =
        build_region_assignment(boxes_of(subjects), priorities_of(subjects), grid, grid);
    REQUIRE(assign.rects[0] == GridRect{0, 2, 0, 2});

    const Matrix out =
        local_image_cross_attention(z, subjects, assign, 0, fx.weights, fx.adapter, fx.cfg);
    const Matrix q_all = query_concat(z, 0, fx);

    for (int h = 0; h < fx.cfg.heads; ++h) {
        const HeadWeights& hw = fx.weights.layer(0).heads[static_cast<size_t>(h)];
        const Matrix q = matmul(z, hw.wq);
        Matrix q_crop(4, fx.cfg.d_head);
        int local = 0;
        for (int y = 0; y < 2; ++y) {
            for (int x = 0; x < 2; ++x, ++local) {
                for (int d = 0; d < fx.cfg.d_head; ++d) {
                    q_crop.at(local, d) = q.at(y * grid + x, d);
                }
            }
        }
        const auto [k, v] = subject_kv(subjects[0].embedding, 0, h, fx.adapter);
        const Matrix expected = scaled_dot_attention(q_crop, k, v);
        local = 0;
        for (int y = 0; y < 2; ++y) {
            for (int x = 0; x < 2; ++x, ++local) {
                for (int d = 0; d < fx.cfg.d_head; ++d) {
                    CHECK(std::fabs(out.at(y * grid + x, h * fx.cfg.d_head + d) -
                                    expected.at(local, d)) < 1e-12);
                }
            }
        }
    }
    // Exterior rows are exactly the query feature.
    for (int pixel = 0; pixel < grid * grid; ++pixel) {
        if (assign.winner[static_cast<size_t>(pixel)] != kNoWinner) continue;
        for (int c = 0; c < fx.cfg.d_model; ++c) {
            CHECK(out.at(pixel, c) == q_all.at(pixel, c));
        }
    }
}

TEST_CASE("fully occluded subject contributes nothing") {
    Rng rng(45);
    Fixture fx(rng);
    const int grid = 8;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    std::vector<SubjectCondition> with_occluded = {
        make_subject("top", {0.0, 0.0, 0.75, 0.75}, 5, 1, fx.cfg.d_cond, rng),
        make_subject("hidden", {0.25, 0.25, 0.5, 0.5}, 1, 2, fx.cfg.d_cond, rng)};
    std::vector<SubjectCondition> without = {with_occluded[0]};

    const RegionAssignment a1 = build_region_assignment(boxes_of(with_occluded),
                                                        priorities_of(with_occluded), grid, grid);
    const RegionAssignment a2 =
        build_region_assignment(boxes_of(without), priorities_of(without), grid, grid);
    const Matrix out1 =
        local_image_cross_attention(z, with_occluded, a1, 0, fx.weights, fx.adapter, fx.cfg);
    const Matrix out2 =
        local_image_cross_attention(z, without, a2, 0, fx.weights, fx.adapter, fx.cfg);
    CHECK(out1.values == out2.values);  // bit-equal
}

TEST_CASE("masked-sum agrees with crop-and-merge on disjoint covered rows") {
    Rng rng(46);
    Fixture fx(rng);
    const int grid = 8;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    const std::vector<SubjectCondition> subjects = {
        make_subject("a", {0.0, 0.0, 0.5, 0.5}, 0, 2, fx.cfg.d_cond, rng),
        make_subject("b", {0.5, 0.5, 1.0, 1.0}, 0, 1, fx.cfg.d_cond, rng)};
    const auto boxes = boxes_of(subjects);
    const RegionAssignment assign =
        build_region_assignment(boxes, priorities_of(subjects), grid, grid);
    const std::vector<SubjectMask> masks = masks_from_layout(boxes, grid, grid);

    const Matrix anyms =
        local_image_cross_attention(z, subjects, assign, 0, fx.weights, fx.adapter, fx.cfg);
    const Matrix masked = masked_sum_image_cross_attention(z, subjects, masks, 0, fx.weights,
                                                           fx.adapter, fx.cfg);
    const Matrix q_all = query_concat(z, 0, fx);
    for (int pixel = 0; pixel < grid * grid; ++pixel) {
        const bool covered = assign.winner[static_cast<size_t>(pixel)] != kNoWinner;
        for (int c = 0; c < fx.cfg.d_model; ++c) {
            if (covered) {
                const double rel = std::fabs(anyms.at(pixel, c) - masked.at(pixel, c)) /
                                   std::max(1.0, std::fabs(anyms.at(pixel, c)));
                CHECK(rel < 1e-10);
            } else {
                CHECK(masked.at(pixel, c) == 0.0);
                CHECK(anyms.at(pixel, c) == q_all.at(pixel, c));
            }
        }
    }
}

TEST_CASE("masked-sum with one full-canvas box equals global-sum") {
    Rng rng(47);
    Fixture fx(rng);
    const int grid = 4;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    const std::vector<SubjectCondition> subjects = {
        make_subject("a", {0, 0, 1, 1}, 0, 2, fx.cfg.d_cond, rng)};
    const std::vector<SubjectMask> masks = masks_from_layout(boxes_of(subjects), grid, grid);
    const Matrix masked = masked_sum_image_cross_attention(z, subjects, masks, 0, fx.weights,
                                                           fx.adapter, fx.cfg);
    const Matrix global =
        global_sum_image_cross_attention(z, subjects, 0, fx.weights, fx.adapter, fx.cfg);
    CHECK(masked.values == global.values);
}

TEST_CASE("masked-sum adds contributions at overlap pixels") {
    Rng rng(48);
    Fixture fx(rng);
    const int grid = 8;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    const std::vector<SubjectCondition> subjects = {
        make_subject("a", {0.0, 0.0, 0.75, 0.75}, 0, 1, fx.cfg.d_cond, rng),
        make_subject("b", {0.25, 0.25, 1.0, 1.0}, 0, 2, fx.cfg.d_cond, rng)};
    const std::vector<SubjectMask> masks = masks_from_layout(boxes_of(subjects), grid, grid);
    const Matrix masked = masked_sum_image_cross_attention(z, subjects, masks, 0, fx.weights,
                                                           fx.adapter, fx.cfg);
    const Matrix za = plain_image_attention(z, subjects[0], 0, fx);
    const Matrix zb = plain_image_attention(z, subjects[1], 0, fx);
    const int overlap_pixel = 4 * grid + 4;  // covered by both
    REQUIRE(masks[0].on[static_cast<size_t>(overlap_pixel)] == 1);
    REQUIRE(masks[1].on[static_cast<size_t>(overlap_pixel)] == 1);
    for (int c = 0; c < fx.cfg.d_model; ++c) {
        CHECK(std::fabs(masked.at(overlap_pixel, c) -
                        (za.at(overlap_pixel, c) + zb.at(overlap_pixel, c))) < 1e-12);
    }
}

TEST_CASE("global-sum reductions") {
    Rng rng(49);
    Fixture fx(rng);
    const int grid = 4;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);

    SUBCASE("n=1 is plain image attention") {
        const std::vector<SubjectCondition> subjects = {
            make_subject("a", {0, 0, 1, 1}, 0, 3, fx.cfg.d_cond, rng)};
        const Matrix out =
            global_sum_image_cross_attention(z, subjects, 0, fx.weights, fx.adapter, fx.cfg);
        CHECK(max_abs_diff(out, plain_image_attention(z, subjects[0], 0, fx)) < 1e-12);
    }
    SUBCASE("duplicated subject doubles the output") {
        std::vector<SubjectCondition> one = {
            make_subject("a", {0, 0, 1, 1}, 0, 2, fx.cfg.d_cond, rng)};
        std::vector<SubjectCondition> two = {one[0], one[0]};
        two[1].id = "b";
        const Matrix o1 =
            global_sum_image_cross_attention(z, one, 0, fx.weights, fx.adapter, fx.cfg);
        const Matrix o2 =
            global_sum_image_cross_attention(z, two, 0, fx.weights, fx.adapter, fx.cfg);
        for (size_t i = 0; i < o1.values.size(); ++i) {
            CHECK(std::fabs(o2.values[i] - 2.0 * o1.values[i]) < 1e-12);
        }
    }
    SUBCASE("n=3 vs loop oracle") {
        std::vector<SubjectCondition> subjects;
        for (int j = 0; j < 3; ++j) {
            subjects.push_back(
                make_subject("s" + std::to_string(j), {0, 0, 1, 1}, j, 1 + j, fx.cfg.d_cond, rng));
        }
        const Matrix out =
            global_sum_image_cross_attention(z, subjects, 0, fx.weights, fx.adapter, fx.cfg);
        Matrix expected(z.rows, fx.cfg.d_model);
        for (const SubjectCondition& s : subjects) {
            const Matrix zs = plain_image_attention(z, s, 0, fx);
            for (size_t i = 0; i < expected.values.size(); ++i) {
                expected.values[i] += zs.values[i];
            }
        }
        CHECK(max_abs_diff(out, expected) < 1e-12);
    }
}

TEST_CASE("decoupled block mode handling") {
    Rng rng(50);
    Fixture fx(rng);
    const int grid = 4;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    const Matrix c_t = Matrix::random_gaussian(2, fx.cfg.d_cond, rng);
    std::vector<SubjectCondition> subjects = {
        make_subject("a", {0.0, 0.0, 0.5, 1.0}, 1, 1, fx.cfg.d_cond, rng),
        make_subject("b", {0.5, 0.0, 1.0, 1.0}, 0, 2, fx.cfg.d_cond, rng)};

    const Matrix text_only = decoupled_block(z, c_t, subjects, Mode::TextOnly, 0, 1, fx.weights,
                                             fx.adapter, fx.cfg, grid, grid);

    SUBCASE("text-only equals text attention followed by the output projection") {
        const Matrix expected =
            matmul(text_cross_attention(z, c_t, 0, fx.weights, fx.cfg), fx.weights.layer(0).wo);
        CHECK(text_only.values == expected.values);
    }
    SUBCASE("image_scale zero is bit-equal to text-only in every mode") {
        AttentionConfig cfg0 = fx.cfg;
        cfg0.image_scale = 0.0;
        for (Mode mode : {Mode::Anyms, Mode::MaskedSum, Mode::GlobalSum}) {
            const Matrix out = decoupled_block(z, c_t, subjects, mode, 0, 1, fx.weights,
                                               fx.adapter, cfg0, grid, grid);
            CHECK(out.values == text_only.values);
        }
    }
    SUBCASE("no subjects drops the image term in every mode") {
        const std::vector<SubjectCondition> none;
        for (Mode mode : {Mode::Anyms, Mode::MaskedSum, Mode::GlobalSum}) {
            const Matrix out = decoupled_block(z, c_t, none, mode, 0, 1, fx.weights, fx.adapter,
                                               fx.cfg, grid, grid);
            CHECK(out.values == text_only.values);
        }
    }
    SUBCASE("layer and step windows gate the image term") {
        AttentionConfig cfg = fx.cfg;
        cfg.apply_layers = {7};  // never matches layer 0
        const Matrix gated_layer = decoupled_block(z, c_t, subjects, Mode::Anyms, 0, 1, fx.weights,
                                                   fx.adapter, cfg, grid, grid);
        CHECK(gated_layer.values == text_only.values);

        AttentionConfig cfg2 = fx.cfg;
        cfg2.apply_step_min = 5;
        cfg2.apply_step_max = 10;
        const Matrix gated_step = decoupled_block(z, c_t, subjects, Mode::Anyms, 0, 1, fx.weights,
                                                  fx.adapter, cfg2, grid, grid);
        CHECK(gated_step.values == text_only.values);
        const Matrix applied = decoupled_block(z, c_t, subjects, Mode::Anyms, 0, 5, fx.weights,
                                               fx.adapter, cfg2, grid, grid);
        CHECK(applied.values != text_only.values);
    }
    SUBCASE("stream additivity within the output projection") {
        // block(mode) == block(text-only) + (scale * Z_image) * Wo
        fx.cfg.image_scale = 0.8;
        const RegionAssignment assign =
            build_region_assignment(boxes_of(subjects), priorities_of(subjects), grid, grid);
        const Matrix z_image = local_image_cross_attention(z, subjects, assign, 0, fx.weights,
                                                           fx.adapter, fx.cfg);
        Matrix scaled = z_image;
        for (double& v : scaled.values) v *= fx.cfg.image_scale;
        const Matrix image_term = matmul(scaled, fx.weights.layer(0).wo);
        const Matrix full = decoupled_block(z, c_t, subjects, Mode::Anyms, 0, 1, fx.weights,
                                            fx.adapter, fx.cfg, grid, grid);
        for (size_t i = 0; i < full.values.size(); ++i) {
            CHECK(std::fabs(full.values[i] - (text_only.values[i] + image_term.values[i])) <
                  1e-12);
        }
    }
}

TEST_CASE("locality: perturbing a subject changes only its winner pixels") {
    Rng rng(51);
    Fixture fx(rng);
    const int grid = 8;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    std::vector<SubjectCondition> subjects = {
        make_subject("a", {0.0, 0.0, 0.6, 0.6}, 1, 2, fx.cfg.d_cond, rng),
        make_subject("b", {0.4, 0.4, 1.0, 1.0}, 2, 1, fx.cfg.d_cond, rng),
        make_subject("c", {0.1, 0.6, 0.4, 0.9}, 0, 1, fx.cfg.d_cond, rng)};
    const RegionAssignment assign =
        build_region_assignment(boxes_of(subjects), priorities_of(subjects), grid, grid);

    const Matrix base =
        local_image_cross_attention(z, subjects, assign, 0, fx.weights, fx.adapter, fx.cfg);
    std::vector<SubjectCondition> perturbed = subjects;
    for (double& v : perturbed[0].embedding.values) v += 0.37;
    const Matrix out =
        local_image_cross_attention(z, perturbed, assign, 0, fx.weights, fx.adapter, fx.cfg);

    for (int pixel = 0; pixel < grid * grid; ++pixel) {
        const bool owned = assign.winner[static_cast<size_t>(pixel)] == 0;
        for (int c = 0; c < fx.cfg.d_model; ++c) {
            if (!owned) {
                CHECK(out.at(pixel, c) == base.at(pixel, c));  // bit-identical
            }
        }
    }
}

TEST_CASE("priority: overlap rows equal the winner's standalone cropped attention") {
    Rng rng(52);
    Fixture fx(rng);
    const int grid = 8;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    std::vector<SubjectCondition> subjects = {
        make_subject("low", {0.0, 0.0, 0.75, 0.75}, 1, 2, fx.cfg.d_cond, rng),
        make_subject("high", {0.25, 0.25, 1.0, 1.0}, 9, 1, fx.cfg.d_cond, rng)};
    const RegionAssignment assign =
        build_region_assignment(boxes_of(subjects), priorities_of(subjects), grid, grid);
    const Matrix out =
        local_image_cross_attention(z, subjects, assign, 0, fx.weights, fx.adapter, fx.cfg);

    // Standalone run with only the winner present.
    std::vector<SubjectCondition> only_high = {subjects[1]};
    const RegionAssignment assign_high =
        build_region_assignment(boxes_of(only_high), priorities_of(only_high), grid, grid);
    const Matrix standalone =
        local_image_cross_attention(z, only_high, assign_high, 0, fx.weights, fx.adapter, fx.cfg);

    for (int pixel = 0; pixel < grid * grid; ++pixel) {
        const bool in_both = assign.rects[0].contains(pixel / grid, pixel % grid) &&
                             assign.rects[1].contains(pixel / grid, pixel % grid);
        if (!in_both) continue;
        REQUIRE(assign.winner[static_cast<size_t>(pixel)] == 1);
        for (int c = 0; c < fx.cfg.d_model; ++c) {
            CHECK(std::fabs(out.at(pixel, c) - standalone.at(pixel, c)) < 1e-12);
        }
    }
}

TEST_CASE("zero_init_exterior switches the uncovered pixels to zero") {
    Rng rng(53);
    Fixture fx(rng);
    fx.cfg.zero_init_exterior = true;
    const int grid = 4;
    const Matrix z = Matrix::random_gaussian(grid * grid, fx.cfg.d_model, rng);
    const std::vector<SubjectCondition> subjects = {
        make_subject("a", {0.0, 0.0, 0.5, 0.5}, 0, 1, fx.cfg.d_cond, rng)};
    const RegionAssignment assign =
        build_region_assignment(boxes_of(subjects), priorities_of(subjects), grid, grid);
    const Matrix out =
        local_image_cross_attention(z, subjects, assign, 0, fx.weights, fx.adapter, fx.cfg);
    for (int pixel = 0; pixel < grid * grid; ++pixel) {
        if (assign.winner[static_cast<size_t>(pixel)] != kNoWinner) continue;
        for (int c = 0; c < fx.cfg.d_model; ++c) CHECK(out.at(pixel, c) == 0.0);
    }
}

TEST_CASE("empty subject list is rejected by the image streams") {
    Rng rng(54);
    Fixture fx(rng);
    const Matrix z = Matrix::random_gaussian(16, fx.cfg.d_model, rng);
    const RegionAssignment assign = build_region_assignment({}, {}, 4, 4);
    CHECK_THROWS_AS(
        local_image_cross_attention(z, {}, assign, 0, fx.weights, fx.adapter, fx.cfg), SpecError);
    CHECK_THROWS_AS(
        masked_sum_image_cross_attention(z, {}, {}, 0, fx.weights, fx.adapter, fx.cfg), SpecError);
    CHECK_THROWS_AS(global_sum_image_cross_attention(z, {}, 0, fx.weights, fx.adapter, fx.cfg),
                    SpecError);
}

TEST_CASE("attention config validation") {
    AttentionConfig cfg;
    cfg.d_model = 30;  // not heads * d_head
    CHECK_THROWS_AS(cfg.validate(), SpecError);
    cfg.d_model = 32;
    cfg.image_scale = -0.5;
    CHECK_THROWS_AS(cfg.validate(), SpecError);
}
