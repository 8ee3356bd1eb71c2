#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>

#include "searec/model.hpp"
#include "searec/optim.hpp"

#include <json.hpp>

namespace searec {

// Binary checkpoint: magic, version, element width, a JSON meta blob, then
// every canonical parameter (name, element count, raw values) in registration
// order, then the optimizer moments in the same order. Loading into a model
// whose registry disagrees on names or shapes is an error.

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'E', 'C', 'K', 'P', 'T', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint truncated");
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    auto n = read_pod<std::uint64_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw DataError("checkpoint truncated");
    return s;
}

template <typename Real>
void write_values(std::ostream& out, const std::vector<Real>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(Real)));
}

template <typename Real>
void read_values(std::istream& in, std::vector<Real>& v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(Real)));
    if (!in) throw DataError("checkpoint truncated");
}

}  // namespace detail

template <typename Real>
void save_checkpoint(const std::string& path, const Model<Real>& model,
                     std::type_identity_t<const Adam<Real>*> opt, const nlohmann::json& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod(out, kCheckpointVersion);
    detail::write_pod<std::uint8_t>(out, sizeof(Real));
    detail::write_string(out, meta.dump());
    detail::write_pod<std::uint64_t>(out, model.reg.params().size());
    for (const auto& kv : model.reg.params()) {
        detail::write_string(out, kv.first);
        detail::write_pod<std::uint64_t>(out, kv.second->numel());
        detail::write_values(out, kv.second->values);
    }
    detail::write_pod<std::uint8_t>(out, opt ? 1 : 0);
    if (opt) {
        detail::write_pod<std::int64_t>(out, opt->t);
        for (const auto& kv : model.reg.params()) {
            auto mi = opt->m.find(kv.first);
            auto vi = opt->v.find(kv.first);
            std::vector<Real> zero(kv.second->numel(), Real(0));
            detail::write_values(out, mi == opt->m.end() ? zero : mi->second);
            detail::write_values(out, vi == opt->v.end() ? zero : vi->second);
        }
    }
    if (!out) throw DataError("short write on checkpoint: " + path);
}

template <typename Real>
nlohmann::json load_checkpoint(const std::string& path, Model<Real>& model,
                               std::type_identity_t<Adam<Real>*> opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    auto version = detail::read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    auto width = detail::read_pod<std::uint8_t>(in);
    if (width != sizeof(Real))
        throw DataError("checkpoint holds " + std::to_string(width * 8) +
                        "-bit values, model expects " + std::to_string(sizeof(Real) * 8));
    nlohmann::json meta = nlohmann::json::parse(detail::read_string(in));
    auto n = detail::read_pod<std::uint64_t>(in);
    if (n != model.reg.params().size())
        throw DataError("checkpoint parameter count " + std::to_string(n) + " does not match " +
                        std::to_string(model.reg.params().size()));
    for (const auto& kv : model.reg.params()) {
        std::string name = detail::read_string(in);
        if (name != kv.first)
            throw DataError("checkpoint parameter order mismatch: " + name + " vs " + kv.first);
        auto numel = detail::read_pod<std::uint64_t>(in);
        if (numel != kv.second->numel())
            throw DataError("checkpoint size mismatch for " + name);
        detail::read_values(in, kv.second->values);
    }
    auto has_opt = detail::read_pod<std::uint8_t>(in);
    if (opt) {
        opt->m.clear();
        opt->v.clear();
        opt->t = 0;
    }
    if (has_opt) {
        auto t = detail::read_pod<std::int64_t>(in);
        for (const auto& kv : model.reg.params()) {
            std::vector<Real> mm(kv.second->numel()), vv(kv.second->numel());
            detail::read_values(in, mm);
            detail::read_values(in, vv);
            if (opt) {
                opt->m.emplace(kv.first, std::move(mm));
                opt->v.emplace(kv.first, std::move(vv));
            }
        }
        if (opt) opt->t = t;
    }
    return meta;
}

}  // namespace searec
