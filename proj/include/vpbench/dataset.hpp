#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpbench/error.hpp"
#include "vpbench/video.hpp"

namespace vpbench::data {

/// One named tensor stored per episode file.
struct ArraySpec {
    std::string name;
    std::vector<std::size_t> shape;

    std::size_t elems() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }
};

/// Dataset layout: `<root>/manifest.json` plus one `ep_<id>.bin` per episode
/// holding the declared arrays concatenated as little-endian float32.
struct Manifest {
    int format_version = 1;
    std::string kind;               // "pushworld" or "predictions"
    nlohmann::ordered_json config;  // producer configuration, self-describing
    std::uint64_t seed = 0;
    std::vector<ArraySpec> arrays;
    std::vector<std::pair<std::string, std::vector<std::uint64_t>>> splits;
    std::string content_hash;  // over per-episode payload hashes, id order
    std::string cache_key;

    std::size_t episode_elems() const {
        std::size_t n = 0;
        for (const ArraySpec& a : arrays) n += a.elems();
        return n;
    }
    const ArraySpec& array(const std::string& name) const;
    std::size_t array_offset(const std::string& name) const;  // in floats
    const std::vector<std::uint64_t>& split(const std::string& name) const;
    std::vector<std::uint64_t> all_ids() const;
};

std::filesystem::path episode_path(const std::filesystem::path& dir, std::uint64_t id);

void write_manifest(const Manifest& manifest, const std::filesystem::path& dir);
Manifest read_manifest(const std::filesystem::path& dir);
bool manifest_exists(const std::filesystem::path& dir);

/// Write one episode file; `arrays` must align with manifest.arrays.
/// Returns the FNV-1a hash of the payload bytes.
std::uint64_t write_episode(const std::filesystem::path& dir, const Manifest& manifest,
                            std::uint64_t id,
                            const std::vector<std::span<const float>>& arrays);

/// Combine per-episode hashes (in id order) into the dataset content hash.
std::string combine_episode_hashes(const std::vector<std::uint64_t>& hashes);

/// Read-only mmap of one episode file with spans per declared array.
class EpisodeView {
public:
    EpisodeView() = default;
    EpisodeView(const std::filesystem::path& file, const Manifest& manifest);
    EpisodeView(EpisodeView&&) noexcept;
    EpisodeView& operator=(EpisodeView&&) noexcept;
    EpisodeView(const EpisodeView&) = delete;
    EpisodeView& operator=(const EpisodeView&) = delete;
    ~EpisodeView();

    std::span<const float> array(const std::string& name) const;
    std::span<const float> all() const { return {floats_, elems_}; }

private:
    const Manifest* manifest_ = nullptr;
    void* map_ = nullptr;
    std::size_t bytes_ = 0;
    const float* floats_ = nullptr;
    std::size_t elems_ = 0;
};

/// Convenience handle over a dataset directory.
class DatasetReader {
public:
    explicit DatasetReader(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }
    const Manifest& manifest() const { return manifest_; }
    const std::vector<std::uint64_t>& split(const std::string& name) const {
        return manifest_.split(name);
    }

    EpisodeView episode(std::uint64_t id) const;
    Video read_video(std::uint64_t id) const;
    std::vector<float> read_array(std::uint64_t id, const std::string& name) const;

private:
    std::filesystem::path dir_;
    Manifest manifest_;
};

}  // namespace vpbench::data
