// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte ledger for live and peak memory. Tensor storage and compact saved
// values report their allocation and release here through RAII hooks, so the
// measured live set follows real object lifetimes rather than a formula.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace memsave {

enum class MemoryCategory : std::uint8_t { NetworkInput, Activation, TapeSaved, Parameter, Gradient };

inline constexpr std::size_t kMemoryCategoryCount = 5;

std::string_view category_name(MemoryCategory category);

using ObjectId = std::uint64_t;

/// Process-wide unique ids shared by tensors and tracked buffers.
ObjectId next_object_id();

/// Ids handed out so far are all < this value.
ObjectId object_id_watermark();

enum class AllocKind : std::uint8_t { Alloc, Free };

struct AllocEvent {
  ObjectId id = 0;
  std::size_t bytes = 0;
  MemoryCategory category = MemoryCategory::Activation;
  AllocKind kind = AllocKind::Alloc;
};

using CategoryBytes = std::array<std::size_t, kMemoryCategoryCount>;

namespace detail {

class Ledger : public std::enable_shared_from_this<Ledger> {
 public:
  void alloc(ObjectId id, std::size_t bytes, MemoryCategory category);
  void free(ObjectId id);

  std::size_t live_bytes() const;
  std::size_t live_bytes(MemoryCategory category) const { return live_[index(category)]; }
  std::size_t measured_live() const;

  std::size_t peak() const { return peak_; }
  std::size_t peak_including_parameters() const { return peak_all_; }
  const CategoryBytes& peak_breakdown() const { return peak_breakdown_; }
  void reset_peak();

  bool record_events = true;
  std::vector<AllocEvent> events;

 private:
  static std::size_t index(MemoryCategory c) { return static_cast<std::size_t>(c); }
  void update_peak();

  struct Entry {
    std::size_t bytes;
    MemoryCategory category;
  };
  std::unordered_map<ObjectId, Entry> entries_;
  CategoryBytes live_{};
  CategoryBytes peak_breakdown_{};
  std::size_t peak_ = 0;
  std::size_t peak_all_ = 0;
};

/// The ledger installed on this thread, or an empty pointer.
std::weak_ptr<Ledger> current_ledger();

}  // namespace detail

/// Tracks live bytes per category and the peak of the measured total.
/// Parameters are module state that exists before a measurement starts; they
/// are tracked in their own category but excluded from `peak()`.
class Accountant {
 public:
  Accountant();

  std::size_t live_bytes() const { return ledger_->live_bytes(); }
  std::size_t live_bytes(MemoryCategory category) const { return ledger_->live_bytes(category); }
  std::size_t peak() const { return ledger_->peak(); }
  std::size_t peak_including_parameters() const { return ledger_->peak_including_parameters(); }
  /// Live bytes per category at the instant `peak()` was last raised.
  const CategoryBytes& peak_breakdown() const { return ledger_->peak_breakdown(); }
  void reset_peak() { ledger_->reset_peak(); }

  const std::vector<AllocEvent>& events() const { return ledger_->events; }
  void clear_events() { ledger_->events.clear(); }
  void set_record_events(bool on) { ledger_->record_events = on; }

  /// Direct entry points, for traces that do not come from tensors.
  void alloc(ObjectId id, std::size_t bytes, MemoryCategory category) { ledger_->alloc(id, bytes, category); }
  void free(ObjectId id) { ledger_->free(id); }

 private:
  friend class ScopedAccountant;
  std::shared_ptr<detail::Ledger> ledger_;
};

/// Installs an accountant on the current thread for the lifetime of the scope.
class ScopedAccountant {
 public:
  explicit ScopedAccountant(Accountant& accountant);
  ~ScopedAccountant();
  ScopedAccountant(const ScopedAccountant&) = delete;
  ScopedAccountant& operator=(const ScopedAccountant&) = delete;

 private:
  std::weak_ptr<detail::Ledger> previous_;
};

/// Category stamped on tensors created on this thread while the scope lives.
class CategoryScope {
 public:
  explicit CategoryScope(MemoryCategory category);
  ~CategoryScope();
  CategoryScope(const CategoryScope&) = delete;
  CategoryScope& operator=(const CategoryScope&) = delete;

 private:
  MemoryCategory previous_;
};

MemoryCategory current_category();

/// RAII registration of `bytes` with the ledger current at construction.
class TrackedBytes {
 public:
  TrackedBytes() = default;
  TrackedBytes(std::size_t bytes, MemoryCategory category);
  ~TrackedBytes();
  TrackedBytes(TrackedBytes&& other) noexcept;
  TrackedBytes& operator=(TrackedBytes&& other) noexcept;
  TrackedBytes(const TrackedBytes&) = delete;
  TrackedBytes& operator=(const TrackedBytes&) = delete;

  std::size_t bytes() const { return bytes_; }
  ObjectId id() const { return id_; }

 private:
  void release();
  std::weak_ptr<detail::Ledger> ledger_;
  ObjectId id_ = 0;
  std::size_t bytes_ = 0;
};

/// Peak of the measured (non-parameter) live total over a recorded trace.
std::size_t replay_peak(std::span<const AllocEvent> events);

struct MemoryReport {
  std::string network;
  std::string scenario;
  std::string policy;
  int depth = 0;

  std::size_t tape_bytes = 0;
  std::size_t tape_activation_bytes = 0;  // full tensors that are not parameters
  std::size_t tape_parameter_bytes = 0;
  std::size_t tape_compact_bytes = 0;  // masks, seeds, index maps, statistics

  std::size_t peak_bytes = 0;           // forward pass, parameters excluded
  CategoryBytes peak_breakdown{};       // live bytes per category at the forward peak
  std::size_t parameter_bytes = 0;
  std::size_t combined_peak_bytes = 0;  // forward + backward, parameters excluded

  double forward_seconds = 0.0;
  double backward_seconds = 0.0;
};

}  // namespace memsave
