#include "psycode/nn.hpp"

#include <bit>
#include <cstring>

namespace psycode::nn {

GradCheckResult check_gradient(const std::function<double()>& loss, std::span<double> values,
                               std::span<const double> analytic, double step, double floor) {
    if (values.size() != analytic.size()) throw std::invalid_argument("check_gradient: size mismatch");
    GradCheckResult r;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double orig = values[i];
        values[i] = orig + step;
        const double up = loss();
        values[i] = orig - step;
        const double down = loss();
        values[i] = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel > r.max_relative_error) {
            r.max_relative_error = rel;
            r.worst_index = i;
        }
    }
    return r;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw ValidationError("checkpoint has no tensor '" + name + "'");
}

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    Json header;
    header["format"] = "psycode-checkpoint";
    header["version"] = 1;
    header["dtype"] = "f64";
    header["byte_order"] = "little";
    header["meta"] = ckpt.meta;
    Json list = Json::array();
    for (const auto& [name, t] : ckpt.tensors) list.push_back(Json{{"name", name}, {"shape", t.shape}});
    header["tensors"] = list;
    const std::string h = header.dump();
    std::string out;
    put_u64(out, h.size());
    out += h;
    for (const auto& [name, t] : ckpt.tensors) {
        for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 8) throw ValidationError("checkpoint truncated");
    const auto hlen = get_u64(bytes, 0);
    if (8 + hlen > bytes.size()) throw ValidationError("checkpoint header truncated");
    Json header;
    try {
        header = Json::parse(bytes.substr(8, hlen));
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("checkpoint header: ") + e.what());
    }
    if (header.value("dtype", "") != "f64" || header.value("byte_order", "") != "little") {
        throw ValidationError("unsupported checkpoint encoding");
    }
    Checkpoint ckpt;
    ckpt.meta = header.value("meta", Json::object());
    std::size_t at = 8 + hlen;
    for (const auto& entry : header.at("tensors")) {
        Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
        if (at + 8 * t.size() > bytes.size()) throw ValidationError("checkpoint data truncated");
        for (auto& v : t.values) {
            v = std::bit_cast<double>(get_u64(bytes, at));
            at += 8;
        }
        ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    if (at != bytes.size()) throw ValidationError("checkpoint has trailing bytes");
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    write_text_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_text_file(path)); }

}  // namespace psycode::nn
