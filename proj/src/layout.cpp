#include "come/layout.hpp"

#include <map>
#include <sstream>

namespace come {

LayoutDescriptor::LayoutDescriptor(Index frames, Index special_per_frame, Index patches_per_frame,
                                   Index group_size)
    : frames_(frames), special_(special_per_frame), patches_(patches_per_frame), group_(group_size) {
  if (frames < 1) throw DimensionError("layout needs at least one frame");
  if (special_per_frame < 0 || patches_per_frame < 0) {
    throw DimensionError("negative token counts in layout");
  }
  if (group_size < 1) throw DimensionError("group size must be at least 1");
  if (patches_per_frame % group_size != 0) {
    throw DimensionError("patches per frame (" + std::to_string(patches_per_frame) +
                         ") not divisible by group size " + std::to_string(group_size));
  }
}

LayoutDescriptor LayoutDescriptor::grid(Index frames, Index special_per_frame, Index grid_h,
                                        Index grid_w, Index group_size) {
  if (grid_h < 1 || grid_w < 1) throw DimensionError("patch grid must be non-empty");
  LayoutDescriptor l(frames, special_per_frame, grid_h * grid_w, group_size);
  l.grid_h_ = grid_h;
  l.grid_w_ = grid_w;
  return l;
}

TokenRange LayoutDescriptor::group_index(Index group_id) const {
  if (group_id < 0 || group_id >= group_count()) {
    throw std::out_of_range("group id " + std::to_string(group_id) + " out of range [0, " +
                            std::to_string(group_count()) + ")");
  }
  const Index frame = group_id / groups_per_frame();
  const Index within = group_id % groups_per_frame();
  const Index begin = image_token(frame, within * group_);
  return {begin, begin + group_};
}

bool LayoutDescriptor::is_special(Index token_id) const {
  if (token_id < 0 || token_id >= total_tokens()) {
    throw std::out_of_range("token id " + std::to_string(token_id) + " out of range");
  }
  return token_id % tokens_per_frame() < special_;
}

std::string LayoutDescriptor::header() const {
  std::ostringstream s;
  s << "frames=" << frames_ << " special=" << special_ << " patches=" << patches_
    << " group=" << group_;
  if (has_grid()) s << " grid=" << grid_h_ << "x" << grid_w_;
  return s.str();
}

LayoutDescriptor LayoutDescriptor::parse_header(const std::string& line) {
  std::istringstream s(line);
  std::map<std::string, std::string> kv;
  std::string field;
  while (s >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed layout field: " + field);
    kv[field.substr(0, eq)] = field.substr(eq + 1);
  }
  auto need = [&](const char* key) -> Index {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("layout header missing ") + key);
    return std::stol(it->second);
  };
  if (auto g = kv.find("grid"); g != kv.end()) {
    const auto x = g->second.find('x');
    if (x == std::string::npos) throw std::invalid_argument("malformed grid field");
    auto l = grid(need("frames"), need("special"), std::stol(g->second.substr(0, x)),
                  std::stol(g->second.substr(x + 1)), need("group"));
    if (l.patches_per_frame() != need("patches")) {
      throw std::invalid_argument("grid does not match patch count");
    }
    return l;
  }
  return LayoutDescriptor(need("frames"), need("special"), need("patches"), need("group"));
}

TokenSequence::TokenSequence(LayoutDescriptor l, Tensor t) : layout(std::move(l)), tokens(std::move(t)) {
  if (tokens.rank() != 3 || tokens.dim(1) != layout.total_tokens()) {
    throw DimensionError("token tensor shape inconsistent with layout");
  }
}

TokenSequence::TokenSequence(LayoutDescriptor l, Index batch, Index channels)
    : TokenSequence(l, Tensor({batch, l.total_tokens(), channels})) {}

}  // namespace come
