#pragma once

#include <filesystem>
#include <memory>
#include <set>
#include <vector>

#include "ucgs/raven/dataset.hpp"
#include "ucgs/raven/generator.hpp"
#include "ucgs/raven/render.hpp"

namespace ucgs::train {

using raven::ProblemRecord;
using raven::Scene;
using raven::TaskKind;

/// Problem records plus the images their scenes refer to. Satisfies
/// raven::ImageSource.
class Split {
 public:
  Split() = default;

  /// From a dataset directory, images as stored on disk.
  static Split load(const std::filesystem::path& dir) {
    auto loaded = std::make_shared<raven::LoadedDataset>(raven::read_dataset(dir));
    Split s;
    s.task_ = loaded->dataset.header.task;
    s.records_ = loaded->dataset.records;
    s.table_ = std::shared_ptr<const raven::ImageTable>(loaded, &loaded->images);
    s.size_ = loaded->dataset.header.render.height;
    return s;
  }

  /// From records rendered on the fly.
  static Split rendered(std::vector<ProblemRecord> records, std::shared_ptr<const raven::SceneAtlas> atlas) {
    Split s;
    s.task_ = records.empty() ? TaskKind::kRpm : records.front().task;
    s.records_ = std::move(records);
    s.size_ = atlas->config().height;
    s.atlas_ = std::move(atlas);
    return s;
  }

  TaskKind task() const noexcept { return task_; }
  int image_size() const noexcept { return size_; }
  const std::vector<ProblemRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const Image& image(const Scene& s) const { return table_ ? table_->image(s) : atlas_->image(s); }

  /// First `n` records (all when n is 0 or too large).
  Split head(std::size_t n) const {
    Split s = *this;
    if (n != 0 && n < s.records_.size()) s.records_.resize(n);
    return s;
  }

  /// Every distinct scene the split mentions, in scene-index order.
  std::vector<Scene> scenes() const {
    std::set<std::size_t> seen;
    std::vector<Scene> out;
    const auto add = [&](const Scene& s) {
      if (seen.insert(raven::scene_index(s)).second) out.push_back(s);
    };
    for (const auto& r : records_) {
      for (const Scene& s : r.panel) add(s);
      for (const Scene& s : r.candidates) add(s);
      for (const Scene& s : r.right) add(s);
      for (const auto& q : r.queries) add(q.first);
    }
    std::sort(out.begin(), out.end(),
              [](const Scene& a, const Scene& b) { return raven::scene_index(a) < raven::scene_index(b); });
    return out;
  }

 private:
  TaskKind task_ = TaskKind::kRpm;
  int size_ = 0;
  std::vector<ProblemRecord> records_;
  std::shared_ptr<const raven::ImageTable> table_;
  std::shared_ptr<const raven::SceneAtlas> atlas_;
};

}  // namespace ucgs::train
