#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <mutex>
#include <string>
#include <vector>

#include "gatedcot/http.hpp"
#include "gatedcot/step.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& relative) {
  return fs::path(GATEDCOT_FIXTURES) / relative;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string pattern =
        (fs::temp_directory_path() / "gatedcot-test-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::permissions(path_, fs::perms::owner_all, fs::perm_options::add, ec);
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Neumaier compensated summation.
inline double compensated_sum(const std::vector<double>& values) {
  double sum = 0.0;
  double c = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::fabs(sum) >= std::fabs(v)) {
      c += (sum - t) + v;
    } else {
      c += (v - t) + sum;
    }
    sum = t;
  }
  return sum + c;
}

inline double compensated_mean(const std::vector<double>& values) {
  return compensated_sum(values) / static_cast<double>(values.size());
}

// Index of the first maximal element.
inline std::size_t brute_force_argmax(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (values[j] > values[i] || (values[j] == values[i] && j < i)) {
        dominated = true;
      }
    }
    if (!dominated) best = i;
  }
  return best;
}

inline gatedcot::PositionLogits position(
    std::size_t index, std::initializer_list<double> scores) {
  gatedcot::PositionLogits p;
  p.position_index = index;
  int k = 0;
  for (double s : scores) {
    p.top_entries.push_back({"t" + std::to_string(index) + "_" + std::to_string(k++), s});
  }
  return p;
}

// Records requests and answers from a caller-supplied handler.
class FakeTransport final : public gatedcot::HttpTransport {
 public:
  using Handler =
      std::function<gatedcot::HttpResponse(const gatedcot::HttpRequest&)>;
  explicit FakeTransport(Handler handler) : handler_(std::move(handler)) {}

  gatedcot::HttpResponse send(const gatedcot::HttpRequest& request) override {
    {
      std::lock_guard lock(mutex_);
      requests_.push_back(request);
    }
    return handler_(request);
  }
  std::vector<gatedcot::HttpRequest> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

 private:
  Handler handler_;
  mutable std::mutex mutex_;
  std::vector<gatedcot::HttpRequest> requests_;
};

}  // namespace testing_support
