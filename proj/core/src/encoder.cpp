#include "cmlm/encoder.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "cmlm/io.hpp"

namespace cmlm::encoder {

// Structured-text header followed by raw little-endian float32 arrays in
// header-declared order.
void save_checkpoint(const std::string& path, const EncoderState<float>& st) {
  std::ostringstream head;
  head << "cmlm-checkpoint v1\n";
  head << "layers " << st.cfg.layers << '\n';
  head << "dim " << st.cfg.dim << '\n';
  head << "heads " << st.cfg.heads << '\n';
  head << "ffn " << st.cfg.ffn << '\n';
  head << "max_len " << st.cfg.max_len << '\n';
  head << "dropout " << st.cfg.dropout << '\n';
  head << "vocab " << st.cfg.vocab << '\n';
  head << "n_langs " << st.cfg.n_langs << '\n';
  head << "vocab_hash " << hex64(st.vocab_hash) << '\n';
  head << "step " << st.step << '\n';
  auto named = st.named_params();
  head << "tensors " << named.size() << '\n';
  for (const auto& [name, t] : named) {
    head << name;
    for (int d : t->shape) head << ' ' << d;
    head << '\n';
  }
  head << "data\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path);
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : named)
    out.write(reinterpret_cast<const char*>(t->v.data()),
              static_cast<std::streamsize>(t->v.size() * sizeof(float)));
  if (!out) throw InputError("checkpoint write failed: " + path);
}

EncoderState<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  std::string line;
  auto next = [&]() {
    if (!std::getline(in, line)) throw InputError("truncated checkpoint header in " + path);
    return line;
  };
  if (next() != "cmlm-checkpoint v1") throw InputError("bad checkpoint magic in " + path);

  EncoderState<float> st;
  int n_tensors = -1;
  std::vector<std::pair<std::string, std::vector<int>>> decls;
  while (true) {
    next();
    if (line == "data") break;
    auto parts = split_ws(line);
    if (parts.size() < 2) throw InputError("bad checkpoint header line: " + line);
    const std::string& key = parts[0];
    if (key == "layers")
      st.cfg.layers = std::stoi(parts[1]);
    else if (key == "dim")
      st.cfg.dim = std::stoi(parts[1]);
    else if (key == "heads")
      st.cfg.heads = std::stoi(parts[1]);
    else if (key == "ffn")
      st.cfg.ffn = std::stoi(parts[1]);
    else if (key == "max_len")
      st.cfg.max_len = std::stoi(parts[1]);
    else if (key == "dropout")
      st.cfg.dropout = std::stod(parts[1]);
    else if (key == "vocab")
      st.cfg.vocab = std::stoi(parts[1]);
    else if (key == "n_langs")
      st.cfg.n_langs = std::stoi(parts[1]);
    else if (key == "vocab_hash")
      st.vocab_hash = std::stoull(parts[1], nullptr, 16);
    else if (key == "step")
      st.step = std::stoll(parts[1]);
    else if (key == "tensors")
      n_tensors = std::stoi(parts[1]);
    else {
      std::vector<int> shape;
      for (size_t i = 1; i < parts.size(); ++i) shape.push_back(std::stoi(parts[i]));
      decls.emplace_back(key, std::move(shape));
    }
  }
  const int64_t step_keep = st.step;
  st.init(0);  // allocate shapes, then overwrite values
  auto named = st.named_params();
  if (n_tensors != static_cast<int>(named.size()) || decls.size() != named.size())
    throw InputError("checkpoint tensor count mismatch in " + path);
  for (size_t i = 0; i < named.size(); ++i) {
    if (decls[i].first != named[i].first || decls[i].second != named[i].second->shape)
      throw InputError("checkpoint tensor mismatch at " + decls[i].first);
    in.read(reinterpret_cast<char*>(named[i].second->v.data()),
            static_cast<std::streamsize>(named[i].second->v.size() * sizeof(float)));
    if (!in) throw InputError("truncated checkpoint data at " + decls[i].first);
  }
  st.step = step_keep;
  return st;
}

}  // namespace cmlm::encoder
