#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bttr/inkml.hpp"
#include "bttr/metrics.hpp"
#include "bttr/search.hpp"
#include "bttr/synth.hpp"
#include "bttr/train.hpp"

namespace fs = std::filesystem;
using namespace bttr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// flags shared by the subcommands; unset optionals fall back to config file
// values and then to built-in defaults
struct CliOptions {
    std::string config_path;
    bool toy = false;
    std::uint64_t seed = 0;
    std::optional<int> beam;
    std::optional<double> alpha;
    std::optional<int> max_len;
    std::optional<int> epochs;
    std::vector<std::string> checkpoints;
    std::string vocab_path;
    std::string in_path;
    std::string out_path;
    bool skip_bad = false;
};

int worker_threads() {
    // single-threaded math kernels; the env var can only cap, never raise
    int threads = 1;
    if (const char* env = std::getenv("BTTR_THREADS")) {
        int requested = std::atoi(env);
        if (requested >= 1) threads = std::min(threads, requested);
    }
    return threads;
}

ModelConfig resolve_config(const CliOptions& opt) {
    ModelConfig cfg = opt.toy ? ModelConfig::toy_preset() : ModelConfig();
    if (!opt.config_path.empty()) cfg = ModelConfig::from_file(opt.config_path, cfg);
    if (opt.beam) cfg.beam = *opt.beam;
    if (opt.alpha) cfg.length_penalty = static_cast<real>(*opt.alpha);
    if (opt.max_len) cfg.max_len = *opt.max_len;
    cfg.validate();
    std::ostringstream line;
    for (const auto& [k, v] : cfg.to_map()) line << ' ' << k << '=' << v;
    std::cerr << "config:" << line.str() << " threads=" << worker_threads() << '\n';
    return cfg;
}

SearchParams resolve_search(const ModelConfig& cfg) {
    SearchParams p;
    p.beam = cfg.beam;
    p.alpha = cfg.length_penalty;
    p.max_len = cfg.max_len;
    return p;
}

RasterParams resolve_raster(const ModelConfig& cfg) {
    RasterParams r;
    r.target_height = cfg.raster_height;
    r.pen_width = cfg.pen_width;
    return r;
}

struct IndexEntry {
    std::string id;
    std::string image_path;  // absolute
    std::string truth;
};

std::vector<IndexEntry> load_index(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read index file: " + path);
    fs::path base = fs::path(path).parent_path();
    std::vector<IndexEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        if (t1 == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected id<TAB>image[<TAB>truth]");
        std::size_t t2 = line.find('\t', t1 + 1);
        IndexEntry e;
        e.id = line.substr(0, t1);
        std::string img = t2 == std::string::npos ? line.substr(t1 + 1) : line.substr(t1 + 1, t2 - t1 - 1);
        e.image_path = (base / img).string();
        if (t2 != std::string::npos) e.truth = line.substr(t2 + 1);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Sample> load_dataset(const std::vector<IndexEntry>& index, const Vocab& vocab) {
    std::vector<Sample> out;
    for (const auto& e : index) {
        Sample s;
        s.id = e.id;
        s.image = read_pgm(e.image_path);
        try {
            s.tokens = vocab.tokenize(e.truth);
        } catch (const TokenizeError& err) {
            throw DataError("sample " + e.id + ": " + err.what());
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::map<std::string, std::vector<std::string>> load_token_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read file: " + path);
    std::map<std::string, std::vector<std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected id<TAB>tokens");
        std::istringstream toks(line.substr(tab + 1));
        std::vector<std::string> seq;
        std::string t;
        while (toks >> t) seq.push_back(t);
        out[line.substr(0, tab)] = std::move(seq);
    }
    return out;
}

// ----------------------------------------------------------------- render

int cmd_render(const CliOptions& opt) {
    ModelConfig cfg = resolve_config(opt);
    RasterParams raster = resolve_raster(cfg);
    if (!fs::is_directory(opt.in_path)) throw DataError("not a directory: " + opt.in_path);
    fs::create_directories(opt.out_path);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(opt.in_path))
        if (entry.is_regular_file() && entry.path().extension() == ".inkml") files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::ofstream index(fs::path(opt.out_path) / "index.tsv");
    std::vector<std::string> failures;
    int rendered = 0;
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::string id = file.stem().string();
        try {
            InkmlFile ink = parse_inkml(bytes);
            Bitmap bm = rasterize(ink.strokes, raster);
            std::string img_name = id + ".pgm";
            write_pgm(bm, (fs::path(opt.out_path) / img_name).string());
            index << id << '\t' << img_name << '\t' << ink.truth << '\n';
            ++rendered;
        } catch (const std::exception& e) {
            if (!opt.skip_bad) throw DataError(file.string() + ": " + e.what());
            failures.push_back(file.filename().string() + "\t" + e.what());
        }
    }
    if (!failures.empty()) {
        std::ofstream manifest(fs::path(opt.out_path) / "failures.txt");
        for (const auto& f : failures) manifest << f << '\n';
    }
    std::cerr << "rendered " << rendered << " of " << files.size() << " files\n";
    return kExitOk;
}

// ------------------------------------------------------------------ synth

int cmd_synth(const CliOptions& opt, int count, int depth) {
    ModelConfig cfg = resolve_config(opt);
    fs::create_directories(opt.out_path);
    Vocab vocab = synth_vocab();
    RngState rng(opt.seed);
    auto samples = synth_generate(rng, count, depth, vocab, resolve_raster(cfg));

    std::ofstream index(fs::path(opt.out_path) / "index.tsv");
    for (const auto& s : samples) {
        std::string img_name = s.id + ".pgm";
        write_pgm(s.image, (fs::path(opt.out_path) / img_name).string());
        index << s.id << '\t' << img_name << '\t' << vocab.detokenize(s.tokens) << '\n';
    }
    vocab.save_file((fs::path(opt.out_path) / "vocab.txt").string());
    std::cerr << "generated " << samples.size() << " samples\n";
    return kExitOk;
}

// ------------------------------------------------------------------ train

int cmd_train(const CliOptions& opt) {
    ModelConfig cfg = resolve_config(opt);
    Vocab vocab = Vocab::load_file(opt.vocab_path);
    auto dataset = load_dataset(load_index(opt.in_path), vocab);

    BTTRModel model;
    model.init(cfg, vocab.size(), opt.seed);
    int epochs = opt.epochs.value_or(10);
    auto result = train(model, dataset, epochs, opt.seed, [](const TrainReport& r) {
        std::cout << "epoch=" << r.epoch << " loss=" << r.mean_loss << " l2r=" << r.l2r_loss
                  << " r2l=" << r.r2l_loss << " tokacc=" << r.token_acc << '\n'
                  << std::flush;
    });
    restore_params(model, result.best_params);
    model.save(opt.out_path);
    std::cerr << "best epoch " << result.best_epoch << " loss " << result.best_loss << ", checkpoint written to "
              << opt.out_path << '\n';
    return kExitOk;
}

// ------------------------------------------------------------------ infer

int cmd_infer(const CliOptions& opt, const std::string& direction) {
    ModelConfig file_cfg = resolve_config(opt);
    Vocab vocab = Vocab::load_file(opt.vocab_path);
    if (opt.checkpoints.empty()) throw DataError("at least one --checkpoint is required");

    std::vector<BTTRModel> models;
    for (const auto& path : opt.checkpoints) {
        models.push_back(BTTRModel::load(path));
        if (models.back().vocab_size != vocab.size())
            throw DataError("checkpoint " + path + " was trained with vocab size " +
                            std::to_string(models.back().vocab_size) + ", vocabulary file has " +
                            std::to_string(vocab.size()));
    }
    std::vector<BTTRModel*> model_ptrs;
    for (auto& m : models) model_ptrs.push_back(&m);

    // search knobs may come from the command line even when the checkpoint
    // config differs
    SearchParams params = resolve_search(models[0].cfg);
    if (opt.beam) params.beam = *opt.beam;
    if (opt.alpha) params.alpha = static_cast<real>(*opt.alpha);
    if (opt.max_len) params.max_len = *opt.max_len;
    (void)file_cfg;

    auto index = load_index(opt.in_path);
    std::ofstream out(opt.out_path);
    if (!out) throw DataError("cannot write predictions: " + opt.out_path);

    NoGradGuard ng;
    for (const auto& e : index) {
        Bitmap bm = read_pgm(e.image_path);
        Tensor img = Tensor::from_values({1, 1, bm.height, bm.width}, std::vector<real>(bm.pixels));
        std::vector<Memory> memories;
        for (auto* m : model_ptrs) memories.push_back(m->encoder.forward(img, {}, false).at(0));

        std::vector<int> core;
        if (direction == "joint") {
            core = joint_search(model_ptrs, memories, params).winner.core;
        } else {
            Direction dir = direction == "l2r" ? Direction::L2R : Direction::R2L;
            auto pool = beam_search(model_ptrs, memories, dir, params);
            core = pool.at(0).core;
            if (dir == Direction::R2L) std::reverse(core.begin(), core.end());
        }
        out << e.id << '\t' << vocab.detokenize(core) << '\n';
    }
    std::cerr << "wrote " << index.size() << " predictions to " << opt.out_path << '\n';
    return kExitOk;
}

// ------------------------------------------------------------------- eval

int cmd_eval(const std::string& pred_path, const std::string& truth_path, bool machine) {
    auto preds = load_token_file(pred_path);
    auto truths = load_token_file(truth_path);
    EvalReport rep;
    try {
        rep = evaluate(preds, truths);
    } catch (const ContractError& e) {
        throw DataError(e.what());
    }
    print_report(std::cout, rep, machine);
    return kExitOk;
}

// -------------------------------------------------------------- gradcheck

int cmd_gradcheck(std::uint64_t seed) {
    bool all_ok = true;
    auto run = [&](const std::string& name, const GradCheckReport& report) {
        std::cout << name << ": max_rel_err=" << report.max_rel_err << (report.ok ? " ok" : " FAIL") << '\n';
        if (!report.ok) all_ok = false;
    };

    RngState rng(seed);
    run("matmul_softmax_ce", gradcheck_resample(
        [](RngState& r) {
            return std::vector<NamedParam>{{"a", rand_uniform(r, {3, 4}, -1, 1, true)},
                                           {"b", rand_uniform(r, {4, 5}, -1, 1, true)}};
        },
        [](std::vector<NamedParam>& p) {
            return sum(cross_entropy_rows(matmul(p[0].tensor, p[1].tensor), {2, 0, 4}));
        },
        rng));
    run("conv_pool_relu", gradcheck_resample(
        [](RngState& r) {
            return std::vector<NamedParam>{{"x", rand_uniform(r, {1, 2, 5, 5}, -1, 1, true)},
                                           {"w", rand_uniform(r, {3, 2, 3, 3}, -1, 1, true)}};
        },
        [](std::vector<NamedParam>& p) {
            return sum(relu(avgpool2d(conv2d(p[0].tensor, p[1].tensor, 1, 1))));
        },
        rng));
    run("layernorm", gradcheck_resample(
        [](RngState& r) {
            return std::vector<NamedParam>{{"x", rand_uniform(r, {3, 6}, -1, 1, true)},
                                           {"g", rand_uniform(r, {6}, 0.5, 1.5, true)},
                                           {"b", rand_uniform(r, {6}, -0.5, 0.5, true)}};
        },
        [](std::vector<NamedParam>& p) { return sum(layernorm(p[0].tensor, p[1].tensor, p[2].tensor)); }, rng));
    run("attention", gradcheck_resample(
        [](RngState& r) {
            return std::vector<NamedParam>{{"q", rand_uniform(r, {2, 4}, -1, 1, true)},
                                           {"k", rand_uniform(r, {3, 4}, -1, 1, true)},
                                           {"v", rand_uniform(r, {3, 4}, -1, 1, true)}};
        },
        [](std::vector<NamedParam>& p) { return sum(attention(p[0].tensor, p[1].tensor, p[2].tensor)); }, rng));

    // whole micro model through the bidirectional loss
    {
        ModelConfig cfg;
        cfg.growth_rate = 2;
        cfg.block_depth = 1;
        cfg.n_blocks = 2;
        cfg.d_model = 8;
        cfg.heads = 2;
        cfg.d_ff = 16;
        cfg.layers = 1;
        cfg.dropout = 0;
        cfg.max_len = 16;
        BTTRModel model;
        model.init(cfg, 6, seed + 1);
        RngState drng(seed + 2);
        std::vector<Sample> data(2);
        for (int i = 0; i < 2; ++i) {
            data[static_cast<std::size_t>(i)].id = "g" + std::to_string(i);
            Bitmap bm;
            bm.height = 12;
            bm.width = 16;
            bm.pixels.resize(12 * 16);
            for (auto& p : bm.pixels) p = drng.uniform(0, 1);
            data[static_cast<std::size_t>(i)].image = bm;
            data[static_cast<std::size_t>(i)].tokens = {3 + i, 4};
        }
        BiBatch batch = make_bibatch(data, 4);
        auto build_loss = [&]() {
            auto memories = model.encoder.forward(batch.images, batch.img_mask, true);
            std::vector<const Memory*> mems;
            std::vector<std::vector<int>> inputs;
            for (int i = 0; i < batch.batch; ++i) {
                mems.push_back(&memories[static_cast<std::size_t>(i)]);
                inputs.push_back(batch.l2r_input[static_cast<std::size_t>(i)]);
            }
            for (int i = 0; i < batch.batch; ++i) {
                mems.push_back(&memories[static_cast<std::size_t>(i)]);
                inputs.push_back(batch.r2l_input[static_cast<std::size_t>(i)]);
            }
            Tensor logits = model.decoder.forward_teacher_forced(mems, inputs, true);
            int half = batch.batch * batch.l_max;
            return bidirectional_loss(rows(logits, 0, half), rows(logits, half, half), batch).total;
        };
        auto all = model.params();
        std::vector<NamedParam> subset;
        for (auto& p : all)
            if (p.name == "encoder.stem_w" || p.name == "decoder.embedding" ||
                p.name == "decoder.layer0.cross.wq0" || p.name == "decoder.out_b")
                subset.push_back(p);
        run("model_loss", gradcheck(build_loss, subset));
    }

    if (!all_ok) {
        std::cerr << "gradient check FAILED\n";
        return kExitNumeric;
    }
    std::cout << "all gradient checks passed\n";
    return kExitOk;
}

// --------------------------------------------------------------- selftest

int cmd_selftest(std::uint64_t seed) {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok) {
        std::cout << name << (ok ? " ok" : " FAIL") << '\n';
        if (!ok) ++failures;
    };
    RngState rng(seed);

    // vocabulary round trip
    {
        Vocab v = synth_vocab();
        std::ostringstream os;
        v.save(os);
        std::istringstream is(os.str());
        check("vocab_roundtrip", Vocab::load(is) == v);
    }
    // bidirectional batch reversal invariant
    {
        bool ok = true;
        for (int trial = 0; trial < 200 && ok; ++trial) {
            int n = 1 + static_cast<int>(rng.uniform_int(4));
            std::vector<Sample> samples;
            int longest = 0;
            for (int i = 0; i < n; ++i) {
                Sample s;
                s.image.height = 4;
                s.image.width = 4;
                s.image.pixels.assign(16, 0.5);
                int len = 1 + static_cast<int>(rng.uniform_int(6));
                for (int j = 0; j < len; ++j) s.tokens.push_back(3 + static_cast<int>(rng.uniform_int(5)));
                longest = std::max(longest, len);
                samples.push_back(std::move(s));
            }
            BiBatch b = make_bibatch(samples, longest + 1);
            for (int i = 0; i < n && ok; ++i) {
                auto l2r = strip_core(b.l2r_input[static_cast<std::size_t>(i)]);
                auto r2l = strip_core(b.r2l_input[static_cast<std::size_t>(i)]);
                std::reverse(r2l.begin(), r2l.end());
                if (l2r != r2l || l2r != samples[static_cast<std::size_t>(i)].tokens) ok = false;
            }
        }
        check("bibatch_reversal", ok);
    }
    // incremental decoding equals the full pass
    {
        ModelConfig cfg;
        cfg.growth_rate = 2;
        cfg.block_depth = 1;
        cfg.n_blocks = 2;
        cfg.d_model = 8;
        cfg.heads = 2;
        cfg.d_ff = 16;
        cfg.layers = 1;
        cfg.dropout = 0;
        cfg.max_len = 16;
        BTTRModel model;
        model.init(cfg, 8, seed + 3);
        NoGradGuard ng;
        Tensor img = rand_uniform(rng, {1, 1, 12, 16}, 0, 1);
        Memory mem = model.encoder.forward(img, {}, false).at(0);
        bool ok = true;
        for (int trial = 0; trial < 10 && ok; ++trial) {
            std::vector<int> prefix = {Vocab::SOS};
            int len = 1 + static_cast<int>(rng.uniform_int(6));
            for (int j = 0; j < len; ++j) prefix.push_back(3 + static_cast<int>(rng.uniform_int(5)));
            DecoderState state;
            auto inc = model.decoder.decode_step(mem, prefix, state);
            Tensor full = model.decoder.forward_rows(mem, prefix, false);
            std::size_t off = (prefix.size() - 1) * 8;
            for (int t = 0; t < 8; ++t)
                if (std::abs(inc[static_cast<std::size_t>(t)] - full.values()[off + static_cast<std::size_t>(t)]) >
                    1e-5)
                    ok = false;
        }
        check("incremental_decode", ok);

        // beam search terminates and returns sorted finished hypotheses
        std::vector<BTTRModel*> ms = {&model};
        std::vector<Memory> mems = {mem};
        SearchParams params;
        params.beam = 4;
        params.max_len = 8;
        auto pool = beam_search(ms, mems, Direction::L2R, params);
        bool sorted = !pool.empty();
        for (std::size_t i = 0; i + 1 < pool.size(); ++i)
            if (pool[i].penalized(params.alpha) < pool[i + 1].penalized(params.alpha) - 1e-12) sorted = false;
        check("beam_search", sorted);
    }
    // synthetic generator emits tokenizable markup with balanced braces
    {
        Vocab v = synth_vocab();
        bool ok = true;
        auto samples = synth_generate(rng, 50, 2, v);
        for (const auto& s : samples) {
            std::string text = v.detokenize(s.tokens);
            if (v.tokenize(text) != s.tokens) ok = false;
            int depth = 0;
            for (int id : s.tokens) {
                if (v.token(id) == "{") ++depth;
                if (v.token(id) == "}") --depth;
                if (depth < 0) ok = false;
            }
            if (depth != 0) ok = false;
        }
        check("synth_roundtrip", ok);
    }
    // edit distance metric properties
    {
        bool ok = true;
        for (int trial = 0; trial < 200 && ok; ++trial) {
            auto mk = [&]() {
                std::vector<std::string> s;
                int len = static_cast<int>(rng.uniform_int(6));
                for (int i = 0; i < len; ++i) s.push_back(std::string(1, static_cast<char>('a' + rng.uniform_int(3))));
                return s;
            };
            auto a = mk(), b = mk(), c = mk();
            if (token_edit_distance(a, b) != token_edit_distance(b, a)) ok = false;
            if (token_edit_distance(a, b) > token_edit_distance(a, c) + token_edit_distance(c, b)) ok = false;
            if ((token_edit_distance(a, b) == 0) != (a == b)) ok = false;
        }
        check("edit_distance_metric", ok);
    }

    if (failures) {
        std::cerr << failures << " selftest check(s) FAILED\n";
        return kExitNumeric;
    }
    std::cout << "selftest passed\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"handwritten mathematical expression recognizer"};
    app.require_subcommand(1);

    CliOptions opt;
    int synth_count = 100, synth_depth = 2;
    std::string direction = "joint";
    std::string pred_path, truth_path;
    bool machine = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "config file (key = value lines)");
        cmd->add_flag("--toy", opt.toy, "start from the reduced toy preset");
        cmd->add_option("--seed", opt.seed, "random seed");
    };
    auto add_search = [&](CLI::App* cmd) {
        cmd->add_option("--beam", opt.beam, "beam width");
        cmd->add_option("--alpha", opt.alpha, "length penalty exponent");
        cmd->add_option("--max-len", opt.max_len, "decoding length limit");
    };

    auto* render = app.add_subcommand("render", "rasterize a directory of InkML files");
    add_common(render);
    render->add_option("--in", opt.in_path, "InkML directory")->required();
    render->add_option("--out", opt.out_path, "output directory")->required();
    render->add_flag("--skip-bad", opt.skip_bad, "log unparseable files instead of aborting");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    synth->add_option("--out", opt.out_path, "output directory")->required();
    synth->add_option("--count", synth_count, "number of samples");
    synth->add_option("--depth", synth_depth, "grammar recursion depth");

    auto* trn = app.add_subcommand("train", "train a model on an index of images");
    add_common(trn);
    trn->add_option("--data", opt.in_path, "index.tsv with id, image, truth")->required();
    trn->add_option("--vocab", opt.vocab_path, "vocabulary file")->required();
    trn->add_option("--out", opt.out_path, "checkpoint output path")->required();
    trn->add_option("--epochs", opt.epochs, "training epochs");

    auto* infer = app.add_subcommand("infer", "decode images into markup");
    add_common(infer);
    add_search(infer);
    infer->add_option("--data", opt.in_path, "index.tsv with id, image")->required();
    infer->add_option("--checkpoint", opt.checkpoints, "model checkpoint; repeat for an ensemble")->required();
    infer->add_option("--vocab", opt.vocab_path, "vocabulary file")->required();
    infer->add_option("--out", opt.out_path, "prediction output file")->required();
    infer->add_option("--direction", direction, "joint, l2r or r2l")
        ->check(CLI::IsMember({"joint", "l2r", "r2l"}));

    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    eval->add_option("--pred", pred_path, "prediction file (id<TAB>tokens)")->required();
    eval->add_option("--truth", truth_path, "truth file (id<TAB>tokens)")->required();
    eval->add_flag("--machine", machine, "key=value output");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--seed", opt.seed, "random seed");

    auto* st = app.add_subcommand("selftest", "run built-in invariant checks");
    st->add_option("--seed", opt.seed, "random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (render->parsed()) return cmd_render(opt);
        if (synth->parsed()) return cmd_synth(opt, synth_count, synth_depth);
        if (trn->parsed()) return cmd_train(opt);
        if (infer->parsed()) return cmd_infer(opt, direction);
        if (eval->parsed()) return cmd_eval(pred_path, truth_path, machine);
        if (gc->parsed()) return cmd_gradcheck(opt.seed);
        if (st->parsed()) return cmd_selftest(opt.seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const InkmlParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const TokenizeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
