#include "vpbench/dataset.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <fstream>

#include "vpbench/binio.hpp"

namespace vpbench::data {

const ArraySpec& Manifest::array(const std::string& name) const {
    for (const ArraySpec& a : arrays)
        if (a.name == name) return a;
    throw IoError("dataset manifest has no array named '" + name + "'");
}

std::size_t Manifest::array_offset(const std::string& name) const {
    std::size_t off = 0;
    for (const ArraySpec& a : arrays) {
        if (a.name == name) return off;
        off += a.elems();
    }
    throw IoError("dataset manifest has no array named '" + name + "'");
}

const std::vector<std::uint64_t>& Manifest::split(const std::string& name) const {
    for (const auto& [split_name, ids] : splits)
        if (split_name == name) return ids;
    throw IoError("dataset manifest has no split named '" + name + "'");
}

std::vector<std::uint64_t> Manifest::all_ids() const {
    std::vector<std::uint64_t> out;
    for (const auto& [name, ids] : splits) out.insert(out.end(), ids.begin(), ids.end());
    return out;
}

std::filesystem::path episode_path(const std::filesystem::path& dir, std::uint64_t id) {
    return dir / ("ep_" + std::to_string(id) + ".bin");
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& dir) {
    nlohmann::ordered_json j;
    j["format_version"] = manifest.format_version;
    j["kind"] = manifest.kind;
    j["config"] = manifest.config;
    j["seed"] = manifest.seed;
    nlohmann::ordered_json arrays = nlohmann::ordered_json::array();
    for (const ArraySpec& a : manifest.arrays)
        arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "f32le"}});
    j["arrays"] = arrays;
    nlohmann::ordered_json splits;
    for (const auto& [name, ids] : manifest.splits) splits[name] = ids;
    j["splits"] = splits;
    j["content_hash"] = manifest.content_hash;
    j["cache_key"] = manifest.cache_key;

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const auto path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing manifest: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("invalid manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.format_version = j.at("format_version").get<int>();
    m.kind = j.at("kind").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& a : j.at("arrays")) {
        ArraySpec spec;
        spec.name = a.at("name").get<std::string>();
        spec.shape = a.at("shape").get<std::vector<std::size_t>>();
        if (a.at("dtype").get<std::string>() != "f32le")
            throw IoError("unsupported dtype in manifest: " + path.string());
        m.arrays.push_back(std::move(spec));
    }
    for (const auto& [name, ids] : j.at("splits").items())
        m.splits.emplace_back(name, ids.get<std::vector<std::uint64_t>>());
    m.content_hash = j.value("content_hash", "");
    m.cache_key = j.value("cache_key", "");
    return m;
}

bool manifest_exists(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "manifest.json");
}

std::uint64_t write_episode(const std::filesystem::path& dir, const Manifest& manifest,
                            std::uint64_t id,
                            const std::vector<std::span<const float>>& arrays) {
    if (arrays.size() != manifest.arrays.size())
        throw IoError("write_episode: array count mismatch for episode " + std::to_string(id));
    for (std::size_t i = 0; i < arrays.size(); ++i)
        if (arrays[i].size() != manifest.arrays[i].elems())
            throw IoError("write_episode: size mismatch for array '" +
                          manifest.arrays[i].name + "' of episode " + std::to_string(id));

    const auto path = episode_path(dir, id);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write episode file: " + path.string());
    binio::Fnv1a64 hash;
    for (const auto& span : arrays) {
        binio::write_f32le(out, span);
        hash.update_f32le(span);
    }
    if (!out) throw IoError("failed writing episode file: " + path.string());
    return hash.digest();
}

std::string combine_episode_hashes(const std::vector<std::uint64_t>& hashes) {
    binio::Fnv1a64 h;
    for (std::uint64_t e : hashes) h.update_u64(e);
    return binio::hash_hex(h.digest());
}

EpisodeView::EpisodeView(const std::filesystem::path& file, const Manifest& manifest)
    : manifest_(&manifest) {
    const int fd = ::open(file.c_str(), O_RDONLY);
    if (fd < 0) throw IoError("cannot open episode file: " + file.string());
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw IoError("cannot stat episode file: " + file.string());
    }
    bytes_ = static_cast<std::size_t>(st.st_size);
    const std::size_t expected = manifest.episode_elems() * sizeof(float);
    if (bytes_ != expected) {
        ::close(fd);
        throw IoError("episode file " + file.string() + " has " + std::to_string(bytes_) +
                      " bytes, expected " + std::to_string(expected));
    }
    map_ = ::mmap(nullptr, bytes_, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (map_ == MAP_FAILED) {
        map_ = nullptr;
        throw IoError("mmap failed for episode file: " + file.string());
    }
    floats_ = static_cast<const float*>(map_);
    elems_ = bytes_ / sizeof(float);
    if (!binio::host_is_little_endian())
        throw IoError("big-endian hosts must use the copying reader");
}

EpisodeView::EpisodeView(EpisodeView&& other) noexcept { *this = std::move(other); }

EpisodeView& EpisodeView::operator=(EpisodeView&& other) noexcept {
    if (this != &other) {
        if (map_) ::munmap(map_, bytes_);
        manifest_ = other.manifest_;
        map_ = other.map_;
        bytes_ = other.bytes_;
        floats_ = other.floats_;
        elems_ = other.elems_;
        other.map_ = nullptr;
        other.bytes_ = 0;
        other.floats_ = nullptr;
        other.elems_ = 0;
    }
    return *this;
}

EpisodeView::~EpisodeView() {
    if (map_) ::munmap(map_, bytes_);
}

std::span<const float> EpisodeView::array(const std::string& name) const {
    if (!manifest_) throw Error("empty episode view");
    return {floats_ + manifest_->array_offset(name), manifest_->array(name).elems()};
}

DatasetReader::DatasetReader(std::filesystem::path dir)
    : dir_(std::move(dir)), manifest_(read_manifest(dir_)) {}

EpisodeView DatasetReader::episode(std::uint64_t id) const {
    return EpisodeView(episode_path(dir_, id), manifest_);
}

Video DatasetReader::read_video(std::uint64_t id) const {
    const ArraySpec& spec = manifest_.array("video");
    if (spec.shape.size() != 4)
        throw IoError("video array in " + dir_.string() + " is not 4-d");
    Video v(spec.shape[0], spec.shape[1], spec.shape[2], spec.shape[3]);
    const EpisodeView view = episode(id);
    const auto span = view.array("video");
    std::copy(span.begin(), span.end(), v.data.begin());
    return v;
}

std::vector<float> DatasetReader::read_array(std::uint64_t id, const std::string& name) const {
    const EpisodeView view = episode(id);
    const auto span = view.array(name);
    return {span.begin(), span.end()};
}

}  // namespace vpbench::data
