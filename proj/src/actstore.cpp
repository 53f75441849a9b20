#include "probelab/actstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include <zlib.h>

namespace probelab::actstore {

namespace {

using nlohmann::json;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

std::uint32_t crc_update(std::uint32_t crc, const void* data, std::size_t len) {
    const auto* p = static_cast<const Bytef*>(data);
    while (len > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
        crc = static_cast<std::uint32_t>(::crc32(crc, p, chunk));
        p += chunk;
        len -= chunk;
    }
    return crc;
}

void floats_to_le(std::span<const float> src, std::string& out) {
    const std::size_t off = out.size();
    out.resize(off + src.size() * 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + off, src.data(), src.size() * 4);
    } else {
        for (std::size_t i = 0; i < src.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(src[i]);
            for (int b = 0; b < 4; ++b) out[off + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
}

void le_to_floats(const unsigned char* src, std::span<float> dst) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst.data(), src, dst.size() * 4);
    } else {
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
    }
}

// L*N*d*4 with overflow detection.
std::optional<std::uint64_t> block_bytes(std::uint64_t L, std::uint64_t N, std::uint64_t d) {
    std::uint64_t r = 4;
    for (std::uint64_t f : {L, N, d}) {
        if (f != 0 && r > std::numeric_limits<std::uint64_t>::max() / f) return std::nullopt;
        r *= f;
    }
    return r;
}

template <typename E>
E parse_enum(const json& j, const char* key, std::optional<E> (*parse)(std::string_view)) {
    auto v = parse(j.at(key).get<std::string>());
    if (!v) throw DataError(std::string("manifest: bad value for '") + key + "'");
    return *v;
}

struct RawFile {
    std::uint32_t version = 0;
    std::uint32_t checksum = 0;
    std::string manifest_text;
    std::uint64_t payload_offset = 0;
    std::uint64_t file_size = 0;
};

RawFile read_header_and_manifest(std::ifstream& in, const std::filesystem::path& path) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) throw DataError("cannot stat " + path.string() + ": " + ec.message());
    if (size < kHeaderBytes)
        throw DataError("truncated header: expected " + std::to_string(kHeaderBytes) +
                        " bytes, found " + std::to_string(size));
    unsigned char hdr[kHeaderBytes];
    in.read(reinterpret_cast<char*>(hdr), kHeaderBytes);
    if (!in) throw DataError("cannot read header of " + path.string());
    if (std::memcmp(hdr, kMagic, 4) != 0) throw DataError("bad magic: not an .actrun file");
    RawFile rf;
    rf.file_size = size;
    rf.version = get_le<std::uint32_t>(hdr + 4);
    if (rf.version != kFormatVersion)
        throw DataError("unsupported format_version " + std::to_string(rf.version) +
                        " (this reader supports " + std::to_string(kFormatVersion) + ")");
    const auto manifest_len = get_le<std::uint64_t>(hdr + 8);
    rf.checksum = get_le<std::uint32_t>(hdr + 16);
    if (manifest_len > size - kHeaderBytes)
        throw DataError("truncated manifest: expected " + std::to_string(manifest_len) +
                        " bytes, found " + std::to_string(size - kHeaderBytes));
    rf.manifest_text.resize(manifest_len);
    in.read(rf.manifest_text.data(), static_cast<std::streamsize>(manifest_len));
    if (!in) throw DataError("cannot read manifest of " + path.string());
    rf.payload_offset = kHeaderBytes + manifest_len;
    return rf;
}

RunManifest parse_manifest(const RawFile& rf) {
    auto j = json::parse(rf.manifest_text, nullptr, false);
    if (j.is_discarded()) throw DataError("manifest is not valid JSON");
    RunManifest m = manifest_from_json(j);
    if (m.format_version != rf.version)
        throw DataError("manifest format_version " + std::to_string(m.format_version) +
                        " disagrees with header version " + std::to_string(rf.version));
    return m;
}

std::uint64_t expected_payload(const RunManifest& m) {
    auto per_role = block_bytes(m.num_layers, m.num_instances(), m.hidden_dim);
    if (!per_role || m.roles.size() > 2) throw DataError("manifest declares an impossible tensor size");
    return *per_role * m.roles.size();
}

void check_manifest(const RunManifest& m) {
    if (m.num_layers < 2) throw DataError("manifest: num_layers must be at least 2");
    if (m.hidden_dim < 1) throw DataError("manifest: hidden_dim must be at least 1");
    if (m.roles.empty()) throw DataError("manifest: no roles");
    std::set<Role> roles(m.roles.begin(), m.roles.end());
    if (roles.size() != m.roles.size()) throw DataError("manifest: duplicate role");
    std::set<std::string_view> ids;
    for (const auto& id : m.instance_ids) {
        if (!ids.insert(id).second) throw DataError("manifest: duplicate instance id '" + id + "'");
    }
    if (m.labels.size() != m.instance_ids.size())
        throw DataError("manifest: labels do not align with instance ids");
    if (m.behavior.size() != m.instance_ids.size())
        throw DataError("manifest: behavior records do not align with instance ids");
}

}  // namespace

bool RunManifest::has_role(Role r) const {
    return std::find(roles.begin(), roles.end(), r) != roles.end();
}

std::span<const float> ActivationRun::vector_at(Role role, std::size_t layer,
                                                std::size_t instance) const {
    const auto& t = tensors.at(role);
    const std::size_t d = manifest.hidden_dim;
    const std::size_t off = (layer * manifest.num_instances() + instance) * d;
    return std::span<const float>(t).subspan(off, d);
}

Eigen::MatrixXd ActivationRun::layer_features(Role role, std::size_t layer) const {
    if (!manifest.has_role(role))
        throw DataError("run has no '" + std::string(to_string(role)) + "' role");
    if (layer >= manifest.num_layers)
        throw DataError("layer " + std::to_string(layer) + " out of range (L=" +
                        std::to_string(manifest.num_layers) + ")");
    const std::size_t N = manifest.num_instances(), d = manifest.hidden_dim;
    const float* base = tensors.at(role).data() + layer * N * d;
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajorF> m(base, static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
    return m.cast<double>();
}

std::vector<int> ActivationRun::label_bits() const {
    std::vector<int> y;
    y.reserve(manifest.labels.size());
    for (Label l : manifest.labels) y.push_back(label_bit(l));
    return y;
}

void validate(const ActivationRun& run) {
    const RunManifest& m = run.manifest;
    check_manifest(m);
    const std::size_t N = m.num_instances(), d = m.hidden_dim, L = m.num_layers;
    if (run.tensors.size() != m.roles.size())
        throw DataError("tensor roles do not match manifest roles");
    for (Role r : m.roles) {
        auto it = run.tensors.find(r);
        if (it == run.tensors.end())
            throw DataError("missing tensor for role '" + std::string(to_string(r)) + "'");
        if (it->second.size() != L * N * d)
            throw DataError("tensor for role '" + std::string(to_string(r)) + "' has " +
                            std::to_string(it->second.size()) + " values, manifest implies " +
                            std::to_string(L * N * d));
        const auto& t = it->second;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!std::isfinite(t[i])) {
                const std::size_t layer = i / (N * d), inst = (i / d) % N, dim = i % d;
                throw DataError("non-finite value in role '" + std::string(to_string(r)) +
                                "' at layer " + std::to_string(layer) + ", instance " +
                                std::to_string(inst) + ", dim " + std::to_string(dim));
            }
        }
    }
}

nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["format_version"] = m.format_version;
    j["model_id"] = m.model_id;
    j["task"] = to_string(m.task);
    j["variation"] = to_string(m.variation);
    j["sanity"] = to_string(m.sanity);
    j["intervention"] = to_string(m.intervention);
    j["num_layers"] = m.num_layers;
    j["hidden_dim"] = m.hidden_dim;
    j["roles"] = nlohmann::ordered_json::array();
    for (Role r : m.roles) j["roles"].push_back(to_string(r));
    j["degraded"] = m.degraded;
    j["instances"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < m.instance_ids.size(); ++i) {
        nlohmann::ordered_json rec;
        rec["id"] = m.instance_ids[i];
        rec["label"] = to_string(m.labels.at(i));
        const auto& b = m.behavior.at(i);
        rec["generated_text"] = b.generated_text;
        rec["em_correct"] = b.em_correct;
        rec["predicted_label"] = b.predicted_label ? nlohmann::ordered_json(to_string(*b.predicted_label))
                                                   : nlohmann::ordered_json(nullptr);
        j["instances"].push_back(std::move(rec));
    }
    j["notes"] = m.notes;
    return j;
}

RunManifest manifest_from_json(const nlohmann::json& j) {
    try {
        RunManifest m;
        m.format_version = j.at("format_version").get<std::uint32_t>();
        m.model_id = j.at("model_id").get<std::string>();
        m.task = parse_enum(j, "task", parse_task);
        m.variation = parse_enum(j, "variation", parse_variation);
        m.sanity = parse_enum(j, "sanity", parse_sanity);
        m.intervention = parse_enum(j, "intervention", parse_intervention);
        m.num_layers = j.at("num_layers").get<std::size_t>();
        m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        for (const auto& r : j.at("roles")) {
            auto role = parse_role(r.get<std::string>());
            if (!role) throw DataError("manifest: unknown role " + r.dump());
            m.roles.push_back(*role);
        }
        m.degraded = j.value("degraded", false);
        for (const auto& rec : j.at("instances")) {
            m.instance_ids.push_back(rec.at("id").get<std::string>());
            auto label = parse_label(rec.at("label").get<std::string>());
            if (!label) throw DataError("manifest: bad label " + rec.at("label").dump());
            m.labels.push_back(*label);
            BehaviorRecord b;
            b.generated_text = rec.at("generated_text").get<std::string>();
            b.em_correct = rec.at("em_correct").get<bool>();
            const auto& pl = rec.at("predicted_label");
            if (!pl.is_null()) {
                b.predicted_label = parse_label(pl.get<std::string>());
                if (!b.predicted_label) throw DataError("manifest: bad predicted_label " + pl.dump());
            }
            m.behavior.push_back(std::move(b));
        }
        if (auto it = j.find("notes"); it != j.end()) m.notes = *it;
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

void write_run(const ActivationRun& run, const std::filesystem::path& path) {
    validate(run);
    const std::string manifest = manifest_to_json(run.manifest).dump();
    std::string payload;
    payload.reserve(expected_payload(run.manifest));
    for (Role r : run.manifest.roles) floats_to_le(run.tensors.at(r), payload);

    std::uint32_t crc = crc_update(0, manifest.data(), manifest.size());
    crc = crc_update(crc, payload.data(), payload.size());

    std::string header(kMagic, 4);
    put_le<std::uint32_t>(header, run.manifest.format_version);
    put_le<std::uint64_t>(header, manifest.size());
    put_le<std::uint32_t>(header, crc);
    put_le<std::uint32_t>(header, 0);

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

ActivationRun read_run(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    RawFile rf = read_header_and_manifest(in, path);
    ActivationRun run;
    run.manifest = parse_manifest(rf);
    check_manifest(run.manifest);

    const std::uint64_t want = expected_payload(run.manifest);
    const std::uint64_t have = rf.file_size - rf.payload_offset;
    if (have < want)
        throw DataError("truncated tensor data: expected " + std::to_string(want) +
                        " bytes, found " + std::to_string(have));
    if (have > want)
        throw DataError("trailing bytes after tensor data: expected " + std::to_string(want) +
                        " bytes, found " + std::to_string(have));

    std::vector<unsigned char> payload(want);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(want));
    if (!in) throw DataError("cannot read tensor data of " + path.string());

    std::uint32_t crc = crc_update(0, rf.manifest_text.data(), rf.manifest_text.size());
    crc = crc_update(crc, payload.data(), payload.size());
    if (crc != rf.checksum)
        throw DataError("checksum mismatch: header " + hex64(rf.checksum) + ", computed " + hex64(crc));

    const std::size_t per_role = static_cast<std::size_t>(want / run.manifest.roles.size()) / 4;
    std::size_t offset = 0;
    for (Role r : run.manifest.roles) {
        std::vector<float> t(per_role);
        le_to_floats(payload.data() + offset, t);
        offset += per_role * 4;
        run.tensors.emplace(r, std::move(t));
    }
    validate(run);
    return run;
}

RunManifest read_manifest(const std::filesystem::path& path) {
    return read_run(path).manifest;
}

PairReport validate_pair(const RunManifest& a, const RunManifest& b) {
    PairReport rep;
    if (a.task != b.task)
        rep.problems.push_back("task differs: " + std::string(to_string(a.task)) + " vs " +
                               std::string(to_string(b.task)));
    if (a.num_layers != b.num_layers)
        rep.problems.push_back("num_layers differs: " + std::to_string(a.num_layers) + " vs " +
                               std::to_string(b.num_layers));
    if (a.hidden_dim != b.hidden_dim)
        rep.problems.push_back("hidden_dim differs: " + std::to_string(a.hidden_dim) + " vs " +
                               std::to_string(b.hidden_dim));
    if (a.instance_ids.size() != b.instance_ids.size()) {
        rep.problems.push_back("instance count differs: " + std::to_string(a.instance_ids.size()) +
                               " vs " + std::to_string(b.instance_ids.size()));
    } else {
        std::unordered_map<std::string_view, std::size_t> where;
        for (std::size_t i = 0; i < b.instance_ids.size(); ++i) where.emplace(b.instance_ids[i], i);
        rep.permutation.resize(a.instance_ids.size());
        for (std::size_t i = 0; i < a.instance_ids.size(); ++i) {
            auto it = where.find(a.instance_ids[i]);
            if (it == where.end()) {
                rep.problems.push_back("instance '" + a.instance_ids[i] + "' missing from other run");
                rep.permutation.clear();
                break;
            }
            rep.permutation[i] = it->second;
            if (it->second != i) rep.needs_reorder = true;
        }
    }
    rep.compatible = rep.problems.empty();
    if (!rep.compatible) {
        rep.needs_reorder = false;
        rep.permutation.clear();
    }
    return rep;
}

PairReport validate_pair(const ActivationRun& baseline, const ActivationRun& other) {
    return validate_pair(baseline.manifest, other.manifest);
}

ActivationRun reorder(const ActivationRun& run, std::span<const std::size_t> permutation) {
    const RunManifest& m = run.manifest;
    if (permutation.size() != m.num_instances())
        throw InvariantError("reorder: permutation size does not match instance count");
    ActivationRun out;
    out.manifest = m;
    out.manifest.instance_ids.clear();
    out.manifest.labels.clear();
    out.manifest.behavior.clear();
    for (std::size_t src : permutation) {
        out.manifest.instance_ids.push_back(m.instance_ids.at(src));
        out.manifest.labels.push_back(m.labels.at(src));
        out.manifest.behavior.push_back(m.behavior.at(src));
    }
    const std::size_t N = m.num_instances(), d = m.hidden_dim;
    for (const auto& [role, t] : run.tensors) {
        std::vector<float> r(t.size());
        for (std::size_t l = 0; l < m.num_layers; ++l)
            for (std::size_t i = 0; i < N; ++i)
                std::copy_n(t.begin() + static_cast<std::ptrdiff_t>((l * N + permutation[i]) * d), d,
                            r.begin() + static_cast<std::ptrdiff_t>((l * N + i) * d));
        out.tensors.emplace(role, std::move(r));
    }
    return out;
}

}  // namespace probelab::actstore
