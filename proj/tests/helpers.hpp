#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "stockpot/checkpoint.hpp"
#include "stockpot/tensor_store.hpp"

namespace stockpot::testing {

inline Checkpoint make_checkpoint(
    const std::vector<std::pair<std::string, std::vector<double>>>& tensors,
    DType dtype = DType::F64) {
    Checkpoint ckpt;
    for (const auto& [name, values] : tensors) {
        ckpt.tensors.emplace(
            name, TensorRecord::from_f64(dtype, {values.size()}, values));
    }
    return ckpt;
}

inline Checkpoint scalar_checkpoint(const std::map<std::string, double>& values) {
    Checkpoint ckpt;
    for (const auto& [name, value] : values) {
        ckpt.tensors.emplace(name,
                             TensorRecord::from_f64(DType::F64, {}, std::vector<double>{value}));
    }
    return ckpt;
}

inline std::vector<double> tensor_values(const Checkpoint& ckpt, const std::string& name) {
    return ckpt.tensors.at(name).to_f64();
}

inline bool same_bytes(const Checkpoint& a, const Checkpoint& b) {
    return serialize_checkpoint(a) == serialize_checkpoint(b);
}

// Scratch directory under the system temp root, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("stockpot_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

}  // namespace stockpot::testing
