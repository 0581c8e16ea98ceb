#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "bttr/raster.hpp"

namespace bttr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All architecture, optimizer and search hyperparameters in one record.
// Defaults are the full-scale preset; toy_preset() scales everything down.
struct ModelConfig {
    // encoder
    int growth_rate = 24;
    int block_depth = 16;
    int n_blocks = 3;
    real compression = 0.5;
    // stem is a 3x3 stride-2 conv to 2*growth_rate channels (deviation knob,
    // see swap_pos_axes for the other documented knob)
    bool swap_pos_axes = false;  // swap the row/col pairing in image positions

    // decoder
    int d_model = 256;
    int heads = 8;
    int d_ff = 1024;
    int layers = 3;
    real dropout = 0.3;
    bool tie_embedding = false;
    int max_len = 200;

    // optimizer
    real rho = 0.9;
    real adadelta_eps = 1e-6;
    real weight_decay = 1e-4;
    real grad_clip = 100.0;
    int batch_size = 16;

    // search
    int beam = 10;
    real length_penalty = 1.0;

    // rasterization
    int raster_height = 128;
    real pen_width = 2.0;

    int d_k() const { return d_model / heads; }

    void validate() const {
        if (d_model % heads != 0) throw ConfigError("d_model must be divisible by the head count");
        if (d_model % 4 != 0) throw ConfigError("d_model must be divisible by 4 for 2-D positional encoding");
        if (compression <= 0 || compression > 1) throw ConfigError("compression must lie in (0,1]");
        if (beam < 1) throw ConfigError("beam size must be >= 1");
        if (length_penalty < 0) throw ConfigError("length penalty must be >= 0");
    }

    static ModelConfig toy_preset() {
        ModelConfig c;
        c.growth_rate = 8;
        c.block_depth = 6;
        c.n_blocks = 2;
        c.d_model = 128;
        c.heads = 8;
        c.d_ff = 512;
        c.layers = 2;
        c.dropout = 0.05;
        c.batch_size = 4;
        c.raster_height = 40;
        return c;
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        auto put = [&](const std::string& k, auto v) {
            std::ostringstream oss;
            oss.precision(17);
            oss << v;
            m[k] = oss.str();
        };
        put("growth_rate", growth_rate);
        put("block_depth", block_depth);
        put("n_blocks", n_blocks);
        put("compression", compression);
        put("swap_pos_axes", swap_pos_axes ? 1 : 0);
        put("d_model", d_model);
        put("heads", heads);
        put("d_ff", d_ff);
        put("layers", layers);
        put("dropout", dropout);
        put("tie_embedding", tie_embedding ? 1 : 0);
        put("max_len", max_len);
        put("rho", rho);
        put("adadelta_eps", adadelta_eps);
        put("weight_decay", weight_decay);
        put("grad_clip", grad_clip);
        put("batch_size", batch_size);
        put("beam", beam);
        put("length_penalty", length_penalty);
        put("raster_height", raster_height);
        put("pen_width", pen_width);
        return m;
    }

    void apply(const std::string& key, const std::string& value) {
        auto as_int = [&] { return std::stoi(value); };
        auto as_real = [&] { return static_cast<real>(std::stod(value)); };
        if (key == "growth_rate") growth_rate = as_int();
        else if (key == "block_depth") block_depth = as_int();
        else if (key == "n_blocks") n_blocks = as_int();
        else if (key == "compression") compression = as_real();
        else if (key == "swap_pos_axes") swap_pos_axes = as_int() != 0;
        else if (key == "d_model") d_model = as_int();
        else if (key == "heads") heads = as_int();
        else if (key == "d_ff") d_ff = as_int();
        else if (key == "layers") layers = as_int();
        else if (key == "dropout") dropout = as_real();
        else if (key == "tie_embedding") tie_embedding = as_int() != 0;
        else if (key == "max_len") max_len = as_int();
        else if (key == "rho") rho = as_real();
        else if (key == "adadelta_eps") adadelta_eps = as_real();
        else if (key == "weight_decay") weight_decay = as_real();
        else if (key == "grad_clip") grad_clip = as_real();
        else if (key == "batch_size") batch_size = as_int();
        else if (key == "beam") beam = as_int();
        else if (key == "length_penalty") length_penalty = as_real();
        else if (key == "raster_height") raster_height = as_int();
        else if (key == "pen_width") pen_width = as_real();
        else throw ConfigError("unknown config key: " + key);
    }

    // key = value text, one entry per line, # comments
    static ModelConfig from_stream(std::istream& is) { return from_stream(is, ModelConfig()); }
    static ModelConfig from_stream(std::istream& is, ModelConfig base) {
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                bool blank = line.find_first_not_of(" \t\r\n") == std::string::npos;
                if (!blank) throw ConfigError("config line " + std::to_string(lineno) + " is not key = value");
                continue;
            }
            auto trim = [](std::string s) {
                std::size_t a = s.find_first_not_of(" \t\r\n");
                if (a == std::string::npos) return std::string();
                std::size_t b = s.find_last_not_of(" \t\r\n");
                return s.substr(a, b - a + 1);
            };
            base.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        base.validate();
        return base;
    }

    static ModelConfig from_file(const std::string& path) { return from_file(path, ModelConfig()); }
    static ModelConfig from_file(const std::string& path, ModelConfig base) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read config file: " + path);
        return from_stream(f, base);
    }

    void save(std::ostream& os) const {
        for (const auto& [k, v] : to_map()) os << k << " = " << v << '\n';
    }
};

}  // namespace bttr
