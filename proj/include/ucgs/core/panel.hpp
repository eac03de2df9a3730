#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ucgs/core/image.hpp"
#include "ucgs/util/errors.hpp"

namespace ucgs {

/// Ordered, immutable sequence of panel items (images, symbols, or codes).
template <class Item>
class BasicPanel {
 public:
  explicit BasicPanel(std::vector<Item> items) : items_(std::move(items)) {
    if (items_.size() < 2) throw ArgumentError("a panel holds at least two items");
  }

  std::size_t size() const noexcept { return items_.size(); }
  const Item& operator[](std::size_t i) const { return items_[i]; }
  const Item& at(std::size_t i) const {
    if (i >= items_.size()) {
      throw BoundsError("panel index " + std::to_string(i) + " out of range for N=" +
                        std::to_string(items_.size()));
    }
    return items_[i];
  }
  std::span<const Item> items() const noexcept { return items_; }

  friend bool operator==(const BasicPanel&, const BasicPanel&) = default;

 private:
  std::vector<Item> items_;
};

/// A panel with one structural position left open. `items` keep the order of
/// the originating panel; `target_slot` may equal `origin_len - 1` past the
/// end when the context is a full panel extended by one slot.
template <class Item>
class BasicContext {
 public:
  BasicContext(std::vector<Item> items, std::size_t target_slot, std::size_t origin_len)
      : items_(std::move(items)), target_slot_(target_slot), origin_len_(origin_len) {
    if (target_slot_ >= origin_len_) {
      throw BoundsError("target slot " + std::to_string(target_slot_) + " out of range for N=" +
                        std::to_string(origin_len_));
    }
    if (items_.size() + 1 != origin_len_) {
      throw ArgumentError("context must hold origin_len - 1 items");
    }
  }

  std::size_t size() const noexcept { return items_.size(); }
  const Item& operator[](std::size_t i) const { return items_[i]; }
  std::span<const Item> items() const noexcept { return items_; }
  std::size_t target_slot() const noexcept { return target_slot_; }
  std::size_t origin_len() const noexcept { return origin_len_; }

  /// Structural position of the i-th retained item.
  std::size_t slot_of(std::size_t i) const noexcept { return i < target_slot_ ? i : i + 1; }

  std::vector<std::size_t> slots() const {
    std::vector<std::size_t> s(items_.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = slot_of(i);
    return s;
  }

  friend bool operator==(const BasicContext&, const BasicContext&) = default;

 private:
  std::vector<Item> items_;
  std::size_t target_slot_;
  std::size_t origin_len_;
};

template <class Item>
struct Replace {
  std::size_t index;
  Item item;
};

struct Remove {
  std::size_t index;
};

template <class Item>
struct Append {
  Item item;
};

template <class Item>
using BasicPanelEdit = std::variant<Replace<Item>, Remove, Append<Item>>;

namespace detail {
inline void check_edit_index(std::size_t index, std::size_t n) {
  if (index >= n) {
    throw BoundsError("edit index " + std::to_string(index) + " out of range for N=" + std::to_string(n));
  }
}
}  // namespace detail

template <class Item>
BasicPanel<Item> replace_item(const BasicPanel<Item>& panel, std::size_t index, Item item) {
  detail::check_edit_index(index, panel.size());
  std::vector<Item> items(panel.items().begin(), panel.items().end());
  items[index] = std::move(item);
  return BasicPanel<Item>(std::move(items));
}

template <class Item>
BasicContext<Item> remove_item(const BasicPanel<Item>& panel, std::size_t index) {
  detail::check_edit_index(index, panel.size());
  std::vector<Item> items;
  items.reserve(panel.size() - 1);
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (i != index) items.push_back(panel[i]);
  }
  return BasicContext<Item>(std::move(items), index, panel.size());
}

template <class Item>
BasicPanel<Item> append_item(const BasicPanel<Item>& panel, Item item) {
  std::vector<Item> items(panel.items().begin(), panel.items().end());
  items.push_back(std::move(item));
  return BasicPanel<Item>(std::move(items));
}

/// The whole panel as the condition for one extra slot past its end.
template <class Item>
BasicContext<Item> extension_context(const BasicPanel<Item>& panel) {
  return BasicContext<Item>(std::vector<Item>(panel.items().begin(), panel.items().end()), panel.size(),
                            panel.size() + 1);
}

template <class Item>
using EditResult = std::variant<BasicPanel<Item>, BasicContext<Item>>;

/// Applies one edit without touching the input. Replace and Append yield a
/// panel, Remove yields a context recording the removed slot.
template <class Item>
EditResult<Item> edit_panel(const BasicPanel<Item>& panel, const BasicPanelEdit<Item>& edit) {
  return std::visit(
      [&](const auto& e) -> EditResult<Item> {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, Replace<Item>>) {
          return replace_item(panel, e.index, e.item);
        } else if constexpr (std::is_same_v<E, Remove>) {
          return remove_item(panel, e.index);
        } else {
          return append_item(panel, e.item);
        }
      },
      edit);
}

using Panel = BasicPanel<Image>;
using Context = BasicContext<Image>;
using PanelEdit = BasicPanelEdit<Image>;

}  // namespace ucgs
