#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "helpers.hpp"
#include "stbd/data.hpp"

using namespace stbd;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("stbd_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("edit distance agrees with the quadratic DP oracle") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<std::size_t> len(0, 15);
    std::uniform_int_distribution<int> tok(5, 9);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<int> a(len(rng)), b(len(rng));
        for (auto& t : a) t = tok(rng);
        for (auto& t : b) t = tok(rng);
        REQUIRE(edit_distance(a, b) == testing::edit_distance_oracle(a, b));
    }
}

TEST_CASE("edit distance properties") {
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<std::size_t> len(0, 10);
    std::uniform_int_distribution<int> tok(5, 8);
    auto rand_seq = [&]() {
        std::vector<int> s(len(rng));
        for (auto& t : s) t = tok(rng);
        return s;
    };
    for (int trial = 0; trial < 100; ++trial) {
        auto a = rand_seq(), b = rand_seq(), c = rand_seq();
        REQUIRE(edit_distance(a, a) == 0);
        REQUIRE(edit_distance(a, b) == edit_distance(b, a));
        REQUIRE(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
        // relabeling both sequences with the same permutation is invariant
        std::vector<int> perm{8, 5, 7, 6};
        auto relabel = [&](std::vector<int> s) {
            for (auto& t : s) t = perm[static_cast<std::size_t>(t - 5)];
            return s;
        };
        REQUIRE(edit_distance(relabel(a), relabel(b)) == edit_distance(a, b));
    }
}

TEST_CASE("cer") {
    SECTION("one substitution in three tokens is 1/3") {
        REQUIRE(cer({5, 6, 7}, {5, 9, 7}) == Catch::Approx(1.0 / 3.0));
    }
    SECTION("empty hypothesis scores 1.0") {
        REQUIRE(cer({5, 6, 7}, {}) == 1.0);
    }
    SECTION("exact match scores 0") {
        REQUIRE(cer({5, 6}, {5, 6}) == 0.0);
    }
    SECTION("long hypotheses can exceed 1.0 because the ratio is unclipped") {
        REQUIRE(cer({5}, {6, 7, 8}) == 3.0);
    }
    SECTION("empty reference is rejected") {
        REQUIRE_THROWS_AS(cer({}, {5}), DataError);
    }
}

TEST_CASE("downsample3") {
    SECTION("six frames of width two stack into two rows of width six") {
        std::vector<double> frames{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
        std::size_t rows = 0;
        auto out = downsample3(frames, 6, 2, &rows);
        REQUIRE(rows == 2);
        REQUIRE(out == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    }
    SECTION("a trailing partial group is zero padded") {
        std::vector<double> frames{1, 2, 3, 4, 5, 6, 7, 8};  // 4 frames, d = 2
        std::size_t rows = 0;
        auto out = downsample3(frames, 4, 2, &rows);
        REQUIRE(rows == 2);
        REQUIRE(out == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 0});
    }
    SECTION("a single frame yields one mostly-zero row") {
        std::size_t rows = 0;
        auto out = downsample3({9.0}, 1, 1, &rows);
        REQUIRE(rows == 1);
        REQUIRE(out == std::vector<double>{9.0, 0.0, 0.0});
    }
    SECTION("every input value lands at its stacked position") {
        std::mt19937_64 rng(5);
        std::normal_distribution<double> gauss;
        const std::size_t n = 11, d = 3;
        std::vector<double> frames(n * d);
        for (auto& x : frames) x = gauss(rng);
        std::size_t rows = 0;
        auto out = downsample3(frames, n, d, &rows);
        REQUIRE(rows == 4);
        for (std::size_t f = 0; f < n; ++f)
            for (std::size_t k = 0; k < d; ++k)
                REQUIRE(out[(f / 3) * 3 * d + (f % 3) * d + k] == frames[f * d + k]);
    }
    SECTION("zero frames are rejected") {
        REQUIRE_THROWS_AS(downsample3({}, 0, 2, nullptr), DataError);
    }
}

TEST_CASE("decoder streams") {
    SECTION("hand example") {
        auto [l2r, r2l] = build_streams({5, 6, 7});
        REQUIRE(l2r.input == std::vector<int>{Vocabulary::kL2R, 5, 6, 7});
        REQUIRE(l2r.target == std::vector<int>{5, 6, 7, Vocabulary::kEos});
        REQUIRE(r2l.input == std::vector<int>{Vocabulary::kR2L, 7, 6, 5});
        REQUIRE(r2l.target == std::vector<int>{7, 6, 5, Vocabulary::kEos});
    }
    SECTION("reversing the reference swaps the stream bodies") {
        auto [l2r, r2l] = build_streams({5, 6, 8});
        auto [l2r_rev, r2l_rev] = build_streams({8, 6, 5});
        REQUIRE(std::vector<int>(l2r.input.begin() + 1, l2r.input.end()) ==
                std::vector<int>(r2l_rev.input.begin() + 1, r2l_rev.input.end()));
        REQUIRE(std::vector<int>(r2l.input.begin() + 1, r2l.input.end()) ==
                std::vector<int>(l2r_rev.input.begin() + 1, l2r_rev.input.end()));
    }
    SECTION("special tokens in the reference are rejected") {
        REQUIRE_THROWS_AS(build_streams({5, Vocabulary::kEos, 6}), DataError);
        REQUIRE_THROWS_AS(build_streams({}), DataError);
    }
}

TEST_CASE("CMVN") {
    Corpus c;
    c.vocab = Vocabulary::synthetic(2);
    auto add_utt = [&](std::vector<double> frames) {
        Utterance u;
        u.feat_dim = 2;
        u.n_frames = frames.size() / 2;
        u.frames = std::move(frames);
        u.reference = {5};
        u.id = "u" + std::to_string(c.utts.size());
        c.utts.push_back(std::move(u));
    };
    add_utt({1.0, 10.0, 3.0, 20.0});
    add_utt({5.0, 30.0});
    c.train_idx = {0, 1};

    auto s = fit_cmvn(c, c.train_idx);
    SECTION("mean and variance match hand values") {
        REQUIRE(s.dim == 2);
        REQUIRE(s.frame_count == 3);
        REQUIRE(s.mean[0] == Catch::Approx(3.0));
        REQUIRE(s.mean[1] == Catch::Approx(20.0));
        REQUIRE(s.var[0] == Catch::Approx(8.0 / 3.0));  // population variance
        REQUIRE(s.var[1] == Catch::Approx(200.0 / 3.0));
    }
    SECTION("normalized training frames have zero mean and unit variance") {
        std::vector<double> all;
        for (auto i : c.train_idx) {
            auto n = apply_cmvn(s, c.utts[i].frames);
            all.insert(all.end(), n.begin(), n.end());
        }
        for (std::size_t d = 0; d < 2; ++d) {
            double mean = 0.0, var = 0.0;
            for (std::size_t f = 0; f < 3; ++f) mean += all[f * 2 + d];
            mean /= 3.0;
            for (std::size_t f = 0; f < 3; ++f) {
                const double x = all[f * 2 + d] - mean;
                var += x * x;
            }
            var /= 3.0;
            REQUIRE(mean == Catch::Approx(0.0).margin(1e-12));
            REQUIRE(var == Catch::Approx(1.0).margin(1e-9));  // 1e-10 floor
        }
    }
    SECTION("stats survive a save/load round trip bit-for-bit") {
        auto dir = temp_dir("cmvn");
        save_cmvn(s, dir / "cmvn.bin");
        auto t = load_cmvn(dir / "cmvn.bin");
        REQUIRE(t.dim == s.dim);
        REQUIRE(t.mean == s.mean);
        REQUIRE(t.var == s.var);
        std::filesystem::remove_all(dir);
    }
    SECTION("dimension mismatch is rejected") {
        REQUIRE_THROWS_AS(apply_cmvn(s, {1.0, 2.0, 3.0}), DataError);
    }
}

TEST_CASE("toy corpus") {
    ToyCorpusParams p;
    p.seed = 11;
    p.n_utts = 50;
    p.vocab_size = 6;
    p.feat_dim = 4;
    auto c = generate_toy_corpus(p);

    SECTION("same seed regenerates the identical corpus") {
        auto c2 = generate_toy_corpus(p);
        REQUIRE(c.utts.size() == c2.utts.size());
        for (std::size_t i = 0; i < c.utts.size(); ++i) {
            REQUIRE(c.utts[i].reference == c2.utts[i].reference);
            REQUIRE(c.utts[i].frames == c2.utts[i].frames);
        }
        REQUIRE(c.train_idx == c2.train_idx);
        REQUIRE(c.dev_idx == c2.dev_idx);
        REQUIRE(c.test_idx == c2.test_idx);
    }
    SECTION("a different seed gives different data") {
        auto p2 = p;
        p2.seed = 12;
        auto c2 = generate_toy_corpus(p2);
        bool any_diff = false;
        for (std::size_t i = 0; i < c.utts.size() && !any_diff; ++i)
            any_diff = c.utts[i].reference != c2.utts[i].reference ||
                       c.utts[i].frames != c2.utts[i].frames;
        REQUIRE(any_diff);
    }
    SECTION("splits partition the corpus 80/10/10") {
        REQUIRE(c.train_idx.size() == 40);
        REQUIRE(c.dev_idx.size() == 5);
        REQUIRE(c.test_idx.size() == 5);
        std::vector<std::size_t> all = c.train_idx;
        all.insert(all.end(), c.dev_idx.begin(), c.dev_idx.end());
        all.insert(all.end(), c.test_idx.begin(), c.test_idx.end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(c.utts.size());
        std::iota(expect.begin(), expect.end(), 0);
        REQUIRE(all == expect);
    }
    SECTION("references and frame counts respect the parameters") {
        for (const auto& u : c.utts) {
            REQUIRE(u.reference.size() >= p.len_min);
            REQUIRE(u.reference.size() <= p.len_max);
            for (int t : u.reference) {
                REQUIRE(t >= Vocabulary::kNumSpecials);
                REQUIRE(t < static_cast<int>(p.vocab_size + Vocabulary::kNumSpecials));
            }
            REQUIRE(u.n_frames >= u.reference.size() * p.frames_per_token_min);
            REQUIRE(u.n_frames <= u.reference.size() * p.frames_per_token_max);
            REQUIRE(u.frames.size() == u.n_frames * p.feat_dim);
        }
    }
}

TEST_CASE("corpus save/load round trip") {
    ToyCorpusParams p;
    p.seed = 2;
    p.n_utts = 12;
    p.vocab_size = 4;
    p.feat_dim = 3;
    auto c = generate_toy_corpus(p);
    auto stats = fit_cmvn(c, c.train_idx);

    auto dir = temp_dir("corpus");
    CorpusPaths paths{dir};
    save_corpus(c, stats, paths);
    auto r = load_corpus(paths);

    REQUIRE(r.vocab.size() == c.vocab.size());
    REQUIRE(r.train_idx.size() == c.train_idx.size());
    REQUIRE(r.dev_idx.size() == c.dev_idx.size());
    REQUIRE(r.test_idx.size() == c.test_idx.size());

    // match utterances by id: the loader renumbers but must preserve content
    for (const auto& orig : c.utts) {
        const Utterance* found = nullptr;
        for (const auto& u : r.utts)
            if (u.id == orig.id) found = &u;
        REQUIRE(found != nullptr);
        REQUIRE(found->reference == orig.reference);
        REQUIRE(found->n_frames == orig.n_frames);
        REQUIRE(found->feat_dim == orig.feat_dim);
        for (std::size_t i = 0; i < orig.frames.size(); ++i)
            REQUIRE(found->frames[i] == Catch::Approx(orig.frames[i]).margin(1e-6));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("vocabulary") {
    auto v = Vocabulary::synthetic(3);
    SECTION("special slots are pinned") {
        REQUIRE(v.token(Vocabulary::kPad) == "<PAD>");
        REQUIRE(v.token(Vocabulary::kUnk) == "<UNK>");
        REQUIRE(v.token(Vocabulary::kEos) == "<EOS>");
        REQUIRE(v.token(Vocabulary::kL2R) == "<L2R>");
        REQUIRE(v.token(Vocabulary::kR2L) == "<R2L>");
        REQUIRE(v.first_content_id() == 5);
        REQUIRE(v.size() == 8);
        REQUIRE(v.content_size() == 3);
    }
    SECTION("unknown strings map to <UNK>") {
        REQUIRE(v.id("nope") == Vocabulary::kUnk);
        REQUIRE(v.id("c01") == 6);
    }
    SECTION("save/load round trip") {
        auto dir = temp_dir("vocab");
        v.save(dir / "vocab.txt");
        auto w = Vocabulary::load(dir / "vocab.txt");
        REQUIRE(w.size() == v.size());
        for (int i = 0; i < static_cast<int>(v.size()); ++i) REQUIRE(w.token(i) == v.token(i));
        std::filesystem::remove_all(dir);
    }
    SECTION("corrupted special slots are rejected on load") {
        auto dir = temp_dir("vocab_bad");
        {
            std::ofstream f(dir / "vocab.txt");
            f << "<PAD>\n<UNK>\n<L2R>\n<EOS>\n<R2L>\nc00\n";  // swapped slots
        }
        REQUIRE_THROWS_AS(Vocabulary::load(dir / "vocab.txt"), DataError);
        std::filesystem::remove_all(dir);
    }
}
