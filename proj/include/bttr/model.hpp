#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bttr/config.hpp"
#include "bttr/decoder.hpp"
#include "bttr/encoder.hpp"
#include "bttr/gradcheck.hpp"
#include "bttr/vocab.hpp"

namespace bttr {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Full encoder-decoder model plus everything needed to rebuild it from disk.
struct BTTRModel {
    ModelConfig cfg;
    Encoder encoder;
    Decoder decoder;
    int vocab_size = 0;

    void init(const ModelConfig& config, int vocab, std::uint64_t seed) {
        cfg = config;
        cfg.validate();
        vocab_size = vocab;
        RngState rng(seed);
        encoder.init(rng, cfg);
        decoder.init(rng, cfg, vocab);
    }

    std::vector<NamedParam> params() {
        std::vector<NamedParam> out;
        encoder.collect(out);
        decoder.collect(out);
        return out;
    }

    void zero_grads() {
        for (auto& p : params()) p.tensor.zero_grad();
    }

    // --------------------------------------------------------- checkpoints
    // Format (documented in the README):
    //   line   "BTTRCKP1"
    //   line   "config <nbytes>"        then that many bytes of key=value text
    //   line   "vocab_size <n>"
    //   line   "bnstats <count>"        then per entry:
    //            line "<name> <n>"      and n little-endian f32 values
    //   line   "params <count>"         then per entry:
    //            line "<name> <ndim> <d0> <d1> ..."  and numel LE f32 values

    void save(const std::string& path) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw CheckpointError("cannot write checkpoint: " + path);
        f << "BTTRCKP1\n";
        std::ostringstream cfg_text;
        cfg.save(cfg_text);
        std::string cfg_str = cfg_text.str();
        f << "config " << cfg_str.size() << '\n' << cfg_str;
        f << "vocab_size " << vocab_size << '\n';

        auto bns = encoder.batchnorms();
        f << "bnstats " << bns.size() * 2 << '\n';
        auto write_f32 = [&f](const std::vector<real>& v) {
            for (real x : v) {
                float b = static_cast<float>(x);
                f.write(reinterpret_cast<const char*>(&b), 4);
            }
        };
        for (std::size_t i = 0; i < bns.size(); ++i) {
            f << "bn" << i << ".running_mean " << bns[i]->running_mean.size() << '\n';
            write_f32(bns[i]->running_mean);
            f << "bn" << i << ".running_var " << bns[i]->running_var.size() << '\n';
            write_f32(bns[i]->running_var);
        }

        auto ps = params();
        f << "params " << ps.size() << '\n';
        for (auto& p : ps) {
            f << p.name << ' ' << p.tensor.ndim();
            for (int d : p.tensor.shape()) f << ' ' << d;
            f << '\n';
            write_f32(p.tensor.values());
        }
        if (!f) throw CheckpointError("write failure on checkpoint: " + path);
    }

    static BTTRModel load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw CheckpointError("cannot read checkpoint: " + path);
        std::string line;
        auto next_line = [&]() {
            if (!std::getline(f, line)) throw CheckpointError(path + ": truncated checkpoint");
            return line;
        };
        if (next_line() != "BTTRCKP1") throw CheckpointError(path + ": not a BTTR checkpoint");

        std::istringstream hdr(next_line());
        std::string word;
        std::size_t cfg_bytes;
        hdr >> word >> cfg_bytes;
        if (word != "config") throw CheckpointError(path + ": missing config block");
        std::string cfg_str(cfg_bytes, '\0');
        f.read(cfg_str.data(), static_cast<std::streamsize>(cfg_bytes));
        std::istringstream cfg_in(cfg_str);
        ModelConfig cfg = ModelConfig::from_stream(cfg_in);

        std::istringstream vs(next_line());
        int vocab = 0;
        vs >> word >> vocab;
        if (word != "vocab_size" || vocab <= 0) throw CheckpointError(path + ": bad vocab_size");

        BTTRModel model;
        model.init(cfg, vocab, 0);

        auto read_f32 = [&f, &path](std::vector<real>& dst, std::size_t n) {
            dst.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                float b;
                f.read(reinterpret_cast<char*>(&b), 4);
                if (!f) throw CheckpointError(path + ": truncated payload");
                dst[i] = static_cast<real>(b);
            }
        };

        std::istringstream bh(next_line());
        std::size_t bn_entries;
        bh >> word >> bn_entries;
        if (word != "bnstats") throw CheckpointError(path + ": missing bnstats block");
        auto bns = model.encoder.batchnorms();
        if (bn_entries != bns.size() * 2) throw CheckpointError(path + ": batch norm stat count mismatch");
        for (std::size_t i = 0; i < bns.size(); ++i) {
            std::size_t n;
            std::istringstream(next_line()) >> word >> n;
            read_f32(bns[i]->running_mean, n);
            std::istringstream(next_line()) >> word >> n;
            read_f32(bns[i]->running_var, n);
        }

        std::istringstream ph(next_line());
        std::size_t n_params;
        ph >> word >> n_params;
        if (word != "params") throw CheckpointError(path + ": missing params block");
        auto ps = model.params();
        if (n_params != ps.size())
            throw CheckpointError(path + ": parameter count mismatch (" + std::to_string(n_params) + " vs " +
                                  std::to_string(ps.size()) + ")");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            std::istringstream ih(next_line());
            std::string name;
            int ndim;
            ih >> name >> ndim;
            if (name != ps[i].name)
                throw CheckpointError(path + ": parameter order mismatch at " + name + " (expected " + ps[i].name +
                                      ")");
            Shape shape(static_cast<std::size_t>(ndim));
            for (auto& d : shape) ih >> d;
            if (shape != ps[i].tensor.shape())
                throw CheckpointError(path + ": shape mismatch for " + name + ": " + shape_str(shape) + " vs " +
                                      shape_str(ps[i].tensor.shape()));
            std::vector<real> vals;
            read_f32(vals, static_cast<std::size_t>(ps[i].tensor.numel()));
            ps[i].tensor.values() = std::move(vals);
        }
        return model;
    }
};

}  // namespace bttr
