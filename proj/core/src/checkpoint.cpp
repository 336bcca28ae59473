#include "gptc/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace gptc::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr std::string_view kMagic = "gptc-ckpt v1";
}

void save_checkpoint(std::ostream& out, const ModelParams<float>& params) {
    out << kMagic << '\n' << params.config.to_line() << '\n';
    params.for_each_tensor([&](const std::string& name, const Mat<float>& m) {
        out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
        out << '\n';
    });
    out << "end\n";
    if (!out) {
        throw ModelError("failed to write checkpoint");
    }
}

ModelParams<float> load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw ModelError("not a gptc-ckpt v1 checkpoint");
    }
    if (!std::getline(in, line)) {
        throw ModelError("checkpoint truncated before config");
    }
    const ModelConfig config = ModelConfig::from_line(line);
    ModelParams<float> params = init_params<float>(config, 0);
    params.for_each_tensor([&](const std::string& name, Mat<float>& m) {
        std::string header;
        if (!std::getline(in, header)) {
            throw ModelError("checkpoint truncated at tensor " + name);
        }
        std::istringstream hs(header);
        std::string tag;
        std::string got;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        hs >> tag >> got >> rows >> cols;
        if (tag != "tensor" || got != name || rows != m.rows() || cols != m.cols()) {
            throw ModelError("checkpoint tensor mismatch: expected " + name + " " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + ", found '" + header + "'");
        }
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
        if (in.get() != '\n') {
            throw ModelError("checkpoint tensor " + name + " truncated");
        }
    });
    if (!std::getline(in, line) || line != "end") {
        throw ModelError("checkpoint has trailing data or lacks an end marker");
    }
    if (!params.all_finite()) {
        throw ModelError("checkpoint contains non-finite values");
    }
    return params;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ModelError("cannot open '" + path + "' for writing");
    }
    save_checkpoint(out, params);
}

ModelParams<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ModelError("cannot open checkpoint '" + path + "'");
    }
    return load_checkpoint(in);
}

std::uint64_t params_digest(const ModelParams<float>& params) {
    std::uint64_t h = fnv1a(params.config.to_line());
    params.for_each_tensor([&](const std::string& name, const Mat<float>& m) {
        h = fnv1a(name, h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(float)), h);
    });
    return h;
}

}  // namespace gptc::model
