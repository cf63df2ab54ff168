// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "driftlab/error.hpp"
#include "driftlab/model/model.hpp"

namespace driftlab::model {

namespace {

using nlohmann::json;
using numerics::Tensor;

constexpr std::string_view kMagic = "driftlab-checkpoint";

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

void write_block(std::ostream& out, std::string_view kind, std::string_view name, const Tensor& t) {
    out << kind << ' ' << name;
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    const std::size_t cols = t.rank() == 2 ? t.cols() : t.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
        out << hex(t[i]) << ((i + 1) % cols == 0 ? '\n' : ' ');
    }
}

json config_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model}, {"heads", c.heads},     {"dropout", c.dropout},
                {"hidden", c.hidden},   {"max_len", c.max_len}, {"ablation", std::string(to_string(c.ablation))}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    c.validate();
    return c;
}

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) fail("unexpected end of file");
        return w;
    }

    void expect(std::string_view w) {
        const std::string got = word();
        if (got != w) fail("expected '" + std::string(w) + "', found '" + got + "'");
    }

    std::size_t count() {
        const std::string w = word();
        char* end = nullptr;
        const unsigned long long v = std::strtoull(w.c_str(), &end, 10);
        if (end == w.c_str() || *end != '\0') fail("expected an integer, found '" + w + "'");
        return static_cast<std::size_t>(v);
    }

    double real() {
        const std::string w = word();
        char* end = nullptr;
        const double v = std::strtod(w.c_str(), &end);
        if (end == w.c_str() || *end != '\0') fail("expected a real, found '" + w + "'");
        return v;
    }

    Tensor block(std::string_view kind, std::string_view name, const numerics::Shape& shape) {
        expect(kind);
        expect(name);
        numerics::Shape got;
        for (std::size_t i = 0; i < shape.size(); ++i) got.push_back(count());
        if (got != shape) fail(std::string(name) + " shape does not match the declared config");
        std::vector<double> v(numerics::shape_product(shape));
        for (double& x : v) x = real();
        try {
            return Tensor(shape, std::move(v));
        } catch (const Error& e) {
            fail(std::string(name) + ": " + e.what());
        }
    }

    [[noreturn]] void fail(const std::string& what) const { throw DataError(source_ + ": " + what); }

private:
    std::istream& in_;
    std::string source_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    ckpt.config.validate();
    const auto shapes = param_shapes(ckpt.config);
    for (std::size_t i = 0; i < kParamCount; ++i) {
        if (ckpt.params.tensors[i].shape() != shapes[i]) throw DimensionError("parameter shapes do not match the config");
    }
    std::ostringstream out;
    out << kMagic << ' ' << kCheckpointVersion << '\n';
    out << "config " << config_json(ckpt.config).dump() << '\n';
    for (std::size_t i = 0; i < kParamCount; ++i) {
        write_block(out, "param", param_name(static_cast<ParamId>(i)), ckpt.params.tensors[i]);
    }
    if (ckpt.training) {
        const TrainingState& st = *ckpt.training;
        out << "training " << st.epochs_done << ' ' << st.adam.step() << ' ' << st.epoch_losses.size() << '\n';
        for (std::size_t i = 0; i < st.epoch_losses.size(); ++i) {
            out << hex(st.epoch_losses[i]) << (i + 1 == st.epoch_losses.size() ? "\n" : " ");
        }
        for (std::size_t i = 0; i < kParamCount; ++i) {
            write_block(out, "adam_m", param_name(static_cast<ParamId>(i)), st.adam.first_moments().at(i));
        }
        for (std::size_t i = 0; i < kParamCount; ++i) {
            write_block(out, "adam_v", param_name(static_cast<ParamId>(i)), st.adam.second_moments().at(i));
        }
    }
    out << "end\n";

    std::ofstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open checkpoint for writing: " + path.string());
    file << out.str();
    if (!file) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open checkpoint: " + path.string());

    std::string header;
    std::getline(file, header);
    const std::string expected = std::string(kMagic) + ' ' + std::to_string(kCheckpointVersion);
    if (header.rfind(kMagic, 0) != 0) throw DataError(path.string() + ": not a driftlab checkpoint");
    if (header != expected) {
        throw DataError(path.string() + ": unsupported checkpoint format '" + header + "' (expected '" + expected + "')");
    }

    Checkpoint ck;
    std::string config_line;
    std::getline(file, config_line);
    if (config_line.rfind("config ", 0) != 0) throw DataError(path.string() + ": missing config line");
    try {
        ck.config = config_from_json(json::parse(config_line.substr(7)));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad config: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(path.string() + ": bad config: " + e.what());
    }

    const auto shapes = param_shapes(ck.config);
    Reader r(file, path.string());
    for (std::size_t i = 0; i < kParamCount; ++i) {
        ck.params.tensors[i] = r.block("param", param_name(static_cast<ParamId>(i)), shapes[i]);
    }
    const std::string next = r.word();
    if (next == "training") {
        TrainingState st;
        st.epochs_done = r.count();
        const std::uint64_t step = r.count();
        const std::size_t n_losses = r.count();
        for (std::size_t i = 0; i < n_losses; ++i) st.epoch_losses.push_back(r.real());
        std::vector<Tensor> m, v;
        for (std::size_t i = 0; i < kParamCount; ++i) {
            m.push_back(r.block("adam_m", param_name(static_cast<ParamId>(i)), shapes[i]));
        }
        for (std::size_t i = 0; i < kParamCount; ++i) {
            v.push_back(r.block("adam_v", param_name(static_cast<ParamId>(i)), shapes[i]));
        }
        st.adam = numerics::AdamState({}, std::move(m), std::move(v), step);
        ck.training = std::move(st);
        r.expect("end");
    } else if (next != "end") {
        r.fail("unexpected section '" + next + "'");
    }
    return ck;
}

}  // namespace driftlab::model
