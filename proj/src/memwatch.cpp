// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/memwatch.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <stdexcept>

namespace memsave {

namespace {

std::atomic<ObjectId> g_next_id{1};

thread_local std::weak_ptr<detail::Ledger> t_ledger;
thread_local MemoryCategory t_category = MemoryCategory::Activation;

}  // namespace

std::string_view category_name(MemoryCategory category) {
  switch (category) {
    case MemoryCategory::NetworkInput: return "network_input";
    case MemoryCategory::Activation: return "activation";
    case MemoryCategory::TapeSaved: return "tape_saved";
    case MemoryCategory::Parameter: return "parameter";
    case MemoryCategory::Gradient: return "gradient";
  }
  return "unknown";
}

ObjectId next_object_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

ObjectId object_id_watermark() { return g_next_id.load(std::memory_order_relaxed); }

namespace detail {

void Ledger::alloc(ObjectId id, std::size_t bytes, MemoryCategory category) {
  if (!entries_.emplace(id, Entry{bytes, category}).second) {
    throw std::logic_error("memwatch: object " + std::to_string(id) + " allocated twice");
  }
  live_[index(category)] += bytes;
  if (record_events) events.push_back({id, bytes, category, AllocKind::Alloc});
  update_peak();
}

void Ledger::free(ObjectId id) {
  auto it = entries_.find(id);
  if (it == entries_.end()) {
    throw std::logic_error("memwatch: free of unknown object " + std::to_string(id));
  }
  const Entry entry = it->second;
  entries_.erase(it);
  live_[index(entry.category)] -= entry.bytes;
  if (record_events) events.push_back({id, entry.bytes, entry.category, AllocKind::Free});
}

std::size_t Ledger::live_bytes() const { return std::accumulate(live_.begin(), live_.end(), std::size_t{0}); }

std::size_t Ledger::measured_live() const { return live_bytes() - live_[index(MemoryCategory::Parameter)]; }

void Ledger::update_peak() {
  const std::size_t measured = measured_live();
  if (measured > peak_) {
    peak_ = measured;
    peak_breakdown_ = live_;
  }
  peak_all_ = std::max(peak_all_, live_bytes());
}

void Ledger::reset_peak() {
  peak_ = measured_live();
  peak_all_ = live_bytes();
  peak_breakdown_ = live_;
}

std::weak_ptr<Ledger> current_ledger() { return t_ledger; }

}  // namespace detail

Accountant::Accountant() : ledger_(std::make_shared<detail::Ledger>()) {}

ScopedAccountant::ScopedAccountant(Accountant& accountant) : previous_(t_ledger) {
  t_ledger = accountant.ledger_;
}

ScopedAccountant::~ScopedAccountant() { t_ledger = previous_; }

CategoryScope::CategoryScope(MemoryCategory category) : previous_(t_category) { t_category = category; }

CategoryScope::~CategoryScope() { t_category = previous_; }

MemoryCategory current_category() { return t_category; }

TrackedBytes::TrackedBytes(std::size_t bytes, MemoryCategory category)
    : ledger_(t_ledger), id_(next_object_id()), bytes_(bytes) {
  if (auto ledger = ledger_.lock()) ledger->alloc(id_, bytes_, category);
}

TrackedBytes::~TrackedBytes() { release(); }

TrackedBytes::TrackedBytes(TrackedBytes&& other) noexcept
    : ledger_(std::move(other.ledger_)), id_(other.id_), bytes_(other.bytes_) {
  other.ledger_.reset();
  other.id_ = 0;
  other.bytes_ = 0;
}

TrackedBytes& TrackedBytes::operator=(TrackedBytes&& other) noexcept {
  if (this != &other) {
    release();
    ledger_ = std::move(other.ledger_);
    id_ = other.id_;
    bytes_ = other.bytes_;
    other.ledger_.reset();
    other.id_ = 0;
    other.bytes_ = 0;
  }
  return *this;
}

void TrackedBytes::release() {
  if (id_ == 0) return;
  if (auto ledger = ledger_.lock()) ledger->free(id_);
  ledger_.reset();
  id_ = 0;
  bytes_ = 0;
}

std::size_t replay_peak(std::span<const AllocEvent> events) {
  std::size_t live = 0;
  std::size_t peak = 0;
  for (const auto& e : events) {
    if (e.category == MemoryCategory::Parameter) continue;
    if (e.kind == AllocKind::Alloc) {
      live += e.bytes;
      peak = std::max(peak, live);
    } else {
      if (e.bytes > live) throw std::logic_error("memwatch: trace frees more than it allocated");
      live -= e.bytes;
    }
  }
  return peak;
}

}  // namespace memsave
