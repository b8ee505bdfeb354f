#include "region.hpp"

#include <hkv/codec.hpp>

#include <map>
#include <set>

namespace hkv {

namespace {

std::string show(SegRef s)
{
  return std::to_string(s.id) + "@" + std::to_string(s.gen);
}

}  // namespace

FsckReport Store::fsck()
{
  wait_idle();
  std::lock_guard guard{maintenance_mu_};
  FsckReport rep;
  auto problem = [&](std::string s) { rep.problems.push_back(std::move(s)); };

  // Ownership: every owned segment is reachable from the committed state
  // under the same owner and generation, and nothing is owned twice.
  const CommittedState state = meta_->state();
  std::map<SegmentId, std::pair<SegRef, Owner>> expected;
  for (const auto& [ref, owner] : state.owned()) {
    if (!expected.emplace(ref.id, std::make_pair(ref, owner)).second) {
      problem("segment " + std::to_string(ref.id) + " owned twice (" + owner.to_string() + ")");
    }
  }
  std::set<SegmentId> seen;
  for (const auto& [id, owner] : storage_->owned_segments()) {
    seen.insert(id);
    auto it = expected.find(id);
    if (it == expected.end()) {
      problem("segment " + std::to_string(id) + " owned by " + owner.to_string() +
              " but not referenced");
      continue;
    }
    if (!(it->second.second == owner)) {
      problem("segment " + std::to_string(id) + " owned by " + owner.to_string() + ", expected " +
              it->second.second.to_string());
    }
    if (storage_->generation(id) != it->second.first.gen) {
      problem("segment " + std::to_string(id) + " generation " +
              std::to_string(storage_->generation(id)) + ", referenced as " + show(it->second.first));
    }
  }
  for (const auto& [id, v] : expected) {
    if (!seen.contains(id)) {
      problem("segment " + show(v.first) + " referenced by " + v.second.to_string() + " but free");
    }
  }

  std::vector<Region*> all;
  {
    std::lock_guard lock{regions_mu_};
    for (auto& r : regions_) {
      all.push_back(r.get());
    }
  }
  for (Region* rp : all) {
    Region& r = *rp;
    std::shared_lock lock{r.mu};
    const std::string rname = "region " + std::to_string(r.id);
    const RegionState* rs = state.region(r.id);
    if (!rs) {
      problem(rname + " missing from the catalog");
      continue;
    }
    if (r.small->chain() != rs->small_chain || r.large->chain() != rs->large_chain) {
      problem(rname + " log chains differ from the catalog");
    }
    if (r.levels.size() != rs->levels.size()) {
      problem(rname + " level count differs from the catalog");
    }
    RefReader reader{*this, r, TrafficClass::kLookupRead, std::nullopt, {}};
    for (u32 li = 0; li < r.levels.size(); ++li) {
      const Level& level = *r.levels[li];
      const LevelDescriptor& d = level.descriptor();
      const std::string lname = rname + " L" + std::to_string(li + 1);
      if (li < rs->levels.size() && !(rs->levels[li] == d)) {
        problem(lname + " descriptor differs from the catalog");
      }
      std::set<SegmentId> attached;
      for (const auto& m : d.medium) {
        attached.insert(m.seg.id);
      }
      LevelCounts counts;
      std::optional<std::string> prev;
      ++rep.levels_checked;
      const KeyResolver resolve = [&](const IndexEntry& e) -> std::string {
        if (e.code == SlotCode::kMediumLogRef) {
          return r.medium->read_key(e.ref, TrafficClass::kLookupRead);
        }
        if (r.large->resolvable(e.ref)) {
          return r.large->read_key(e.ref, TrafficClass::kLookupRead);
        }
        return reader.key(e);
      };
      for (u32 i = 0; i < level.leaf_count(); ++i) {
        std::optional<Leaf> leaf;
        try {
          leaf = level.read_leaf(i, TrafficClass::kLookupRead);
          leaf->validate();
        } catch (const Error& e) {
          problem(lname + " leaf " + std::to_string(i) + ": " + e.what());
          continue;
        }
        ++rep.leaves_checked;
        for (u32 slot = 0; slot < leaf->size(); ++slot) {
          IndexEntry e = leaf->entry(slot);
          ++rep.entries_checked;
          counts.add(e);
          if (e.code == SlotCode::kMediumLogRef) {
            const SegmentId seg = storage_->segment_of(e.ref.offset);
            if (!attached.contains(seg) ||
                !storage_->is_live(SegRef{seg, e.ref.generation}, OwnerKind::kMediumLog)) {
              problem(lname + " medium reference into unattached segment " + std::to_string(seg));
              continue;
            }
          }
          std::string key;
          try {
            key = full_key(e, resolve);
          } catch (const Error& err) {
            problem(lname + " unresolvable reference: " + err.what());
            continue;
          }
          if (prev && !(*prev < key)) {
            problem(lname + " keys out of order at leaf " + std::to_string(i));
          }
          prev = std::move(key);
        }
      }
      if (!(counts == d.counts)) {
        problem(lname + " entry counts differ from its descriptor");
      }
      if (counts.stored_bytes > counts.resolved_bytes) {
        problem(lname + " stored size exceeds resolved size");
      }
      if ((counts.medium_refs == 0) != (counts.stored_bytes == counts.resolved_bytes)) {
        problem(lname + " stored and resolved sizes disagree with its medium references");
      }
    }
  }

  for (const auto& [seg, invalid] : gc_counters()) {
    if (invalid > storage_->segment_length()) {
      problem("GC counter of segment " + std::to_string(seg) + " exceeds the segment length");
    }
  }
  return rep;
}

}  // namespace hkv
