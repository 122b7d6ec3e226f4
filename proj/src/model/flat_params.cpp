#include <algorithm>
#include <stdexcept>

#include "fedrane/model.hpp"
#include "json.hpp"

namespace fedrane::model {
namespace {

template <typename Fn>
void for_each_tensor(const MLPParams& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.extractor.size(); ++i) {
    fn("extractor." + std::to_string(i) + ".weight", p.extractor[i].weight.rows(),
       p.extractor[i].weight.cols(), p.extractor[i].weight.data());
    fn("extractor." + std::to_string(i) + ".bias", std::size_t{1}, p.extractor[i].bias.size(),
       std::span<const double>(p.extractor[i].bias));
  }
  for (std::size_t i = 0; i < p.predictor.size(); ++i) {
    fn("predictor." + std::to_string(i) + ".weight", p.predictor[i].weight.rows(),
       p.predictor[i].weight.cols(), p.predictor[i].weight.data());
    fn("predictor." + std::to_string(i) + ".bias", std::size_t{1}, p.predictor[i].bias.size(),
       std::span<const double>(p.predictor[i].bias));
  }
  for (std::size_t i = 0; i < p.lra.size(); ++i) {
    const auto& s = p.lra[i];
    fn("lra." + std::to_string(i) + ".message", s.message.rows(), s.message.cols(), s.message.data());
    fn("lra." + std::to_string(i) + ".receive", s.receive.rows(), s.receive.cols(), s.receive.data());
    fn("lra." + std::to_string(i) + ".send", s.send.rows(), s.send.cols(), s.send.data());
  }
}

// Splits "extractor.3.weight" into its three parts.
struct TensorName {
  std::string group;
  std::size_t index = 0;
  std::string field;
};

TensorName parse_name(const std::string& name) {
  const auto a = name.find('.');
  const auto b = name.find('.', a + 1);
  if (a == std::string::npos || b == std::string::npos)
    throw ShapeError("layout entry '" + name + "' is not group.index.field");
  TensorName t;
  t.group = name.substr(0, a);
  t.index = std::stoul(name.substr(a + 1, b - a - 1));
  t.field = name.substr(b + 1);
  return t;
}

}  // namespace

Layout layout_of(const MLPParams& params) {
  Layout layout;
  std::size_t offset = 0;
  for_each_tensor(params, [&](std::string name, std::size_t rows, std::size_t cols, std::span<const double>) {
    layout.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  });
  return layout;
}

FlatParams flatten(const MLPParams& params) {
  FlatParams flat;
  flat.layout = layout_of(params);
  flat.values.reserve(flat.layout.empty() ? 0 : flat.layout.back().offset + flat.layout.back().rows * flat.layout.back().cols);
  for_each_tensor(params, [&](const std::string&, std::size_t, std::size_t, std::span<const double> v) {
    flat.values.insert(flat.values.end(), v.begin(), v.end());
  });
  return flat;
}

MLPParams unflatten(const FlatParams& flat) {
  MLPParams p;
  std::size_t expected_offset = 0;
  for (const auto& e : flat.layout) {
    if (e.offset != expected_offset) throw ShapeError("layout entry '" + e.name + "' has a gap or overlap");
    const std::size_t n = e.rows * e.cols;
    if (e.offset + n > flat.values.size()) throw ShapeError("layout exceeds the value vector");
    expected_offset += n;
    const auto first = flat.values.begin() + static_cast<std::ptrdiff_t>(e.offset);
    std::vector<double> chunk(first, first + static_cast<std::ptrdiff_t>(n));
    const TensorName t = parse_name(e.name);

    if (t.group == "extractor" || t.group == "predictor") {
      auto& stack = t.group == "extractor" ? p.extractor : p.predictor;
      if (t.index >= stack.size()) stack.resize(t.index + 1);
      if (t.field == "weight") {
        stack[t.index].weight = Matrix(e.rows, e.cols, std::move(chunk));
      } else if (t.field == "bias") {
        stack[t.index].bias = std::move(chunk);
      } else {
        throw ShapeError("unknown layer field '" + t.field + "'");
      }
    } else if (t.group == "lra") {
      if (t.index >= p.lra.size()) p.lra.resize(t.index + 1);
      Matrix m(e.rows, e.cols, std::move(chunk));
      if (t.field == "message") p.lra[t.index].message = std::move(m);
      else if (t.field == "receive") p.lra[t.index].receive = std::move(m);
      else if (t.field == "send") p.lra[t.index].send = std::move(m);
      else throw ShapeError("unknown message-passing field '" + t.field + "'");
    } else {
      throw ShapeError("unknown parameter group '" + t.group + "'");
    }
  }
  if (expected_offset != flat.values.size()) throw ShapeError("value vector longer than the layout");
  validate(p);
  if (layout_of(p) != flat.layout) throw ShapeError("layout is not in canonical order");
  return p;
}

void require_same_layout(const FlatParams& a, const FlatParams& b, const char* where) {
  if (a.layout != b.layout || a.values.size() != b.values.size())
    throw ShapeError(std::string(where) + ": parameter layouts differ");
}

FlatParams sgd_step(const FlatParams& params, const FlatParams& grads, double lr) {
  require_same_layout(params, grads, "sgd_step");
  FlatParams out = params;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= lr * grads.values[i];
  return out;
}

std::string flat_params_to_json(const FlatParams& flat) {
  nlohmann::json doc;
  doc["layout"] = nlohmann::json::array();
  for (const auto& e : flat.layout)
    doc["layout"].push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}, {"offset", e.offset}});
  doc["values"] = flat.values;
  return doc.dump();
}

FlatParams flat_params_from_json(const std::string& text) {
  FlatParams flat;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& e : doc.at("layout"))
      flat.layout.push_back({e.at("name").get<std::string>(), e.at("rows").get<std::size_t>(),
                             e.at("cols").get<std::size_t>(), e.at("offset").get<std::size_t>()});
    flat.values = doc.at("values").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed parameter document: ") + e.what());
  }
  return flat;
}

}  // namespace fedrane::model
