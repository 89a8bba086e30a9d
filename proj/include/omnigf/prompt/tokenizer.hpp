#pragma once

#include <string>
#include <vector>

namespace omnigf {

// Byte-level tokenizer with reserved special tokens. Ids 0..255 are raw
// bytes; specials follow. One byte == one token, so character offsets into
// decoded text equal token offsets, which the anchor bookkeeping relies on.
class Tokenizer {
 public:
  static constexpr int kGazePadId = 256;
  static constexpr int kEosId = 257;
  static constexpr int kVocabSize = 258;
  static constexpr const char* kGazePadText = "<|gaze_pad|>";
  static constexpr const char* kEosText = "<|eos|>";

  static std::vector<int> encode(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    const std::string pad = kGazePadText;
    const std::string eos = kEosText;
    size_t i = 0;
    while (i < text.size()) {
      if (text.compare(i, pad.size(), pad) == 0) {
        ids.push_back(kGazePadId);
        i += pad.size();
      } else if (text.compare(i, eos.size(), eos) == 0) {
        ids.push_back(kEosId);
        i += eos.size();
      } else {
        ids.push_back(static_cast<unsigned char>(text[i]));
        ++i;
      }
    }
    return ids;
  }

  static std::string decode(const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
      if (id == kGazePadId)
        out += kGazePadText;
      else if (id == kEosId)
        out += kEosText;
      else if (id >= 0 && id < 256)
        out.push_back(static_cast<char>(id));
      else
        out += "?";
    }
    return out;
  }

  // Decode stopping at (and excluding) the first EOS; plain bytes only.
  static std::string decode_until_eos(const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
      if (id == kEosId) break;
      if (id == kGazePadId)
        out += kGazePadText;
      else if (id >= 0 && id < 256)
        out.push_back(static_cast<char>(id));
    }
    return out;
  }
};

}  // namespace omnigf
