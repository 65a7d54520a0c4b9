#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "piecer/checkpoint.hpp"

using namespace piecer;

namespace {

std::string golden_bytes(const char* name) {
  std::ifstream in(std::string(PIECER_SOURCE_DIR) + "/tests/golden/" + name, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

RunConfig tiny_run() {
  auto c = load_run_config("", {"model.hidden=8", "model.heads=2", "model.layers=1", "model.ffn_dim=8",
                                "piecer.layers=1", "piecer.heads=2", "piecer.ffn_dim=8"},
                           5);
  return c;
}

Vocab tiny_vocab() { return Vocab({"<unk>", "<sep>", "cat", "dog"}); }

std::string bytes_of(const CheckpointFile& f) {
  std::ostringstream out;
  write_checkpoint_file(f, out);
  return out.str();
}

}  // namespace

TEST(Checkpoint, GoldenContainer) {
  const std::string golden = golden_bytes("tiny_checkpoint.pckp");
  ASSERT_FALSE(golden.empty());
  std::istringstream in(golden);
  const auto f = read_checkpoint_file(in);
  EXPECT_EQ(f.header["meta"]["best_epoch"], 2);
  ASSERT_EQ(f.tensors.size(), 2u);
  EXPECT_EQ(f.tensors[0].name, "w");
  EXPECT_EQ(f.tensors[0].value.shape(), (Shape{2, 3}));
  EXPECT_EQ(f.tensors[0].value(1, 2), -0.125);
  EXPECT_EQ(f.tensors[1].value.shape(), (Shape{2}));
  EXPECT_EQ(f.tensors[1].value[0], 1e-300);
  EXPECT_EQ(bytes_of(f), golden);
}

TEST(Checkpoint, RejectsCorruptContainers) {
  const std::string golden = golden_bytes("tiny_checkpoint.pckp");
  auto reads = [](std::string bytes) {
    std::istringstream in(bytes);
    read_checkpoint_file(in);
  };
  std::string magic = golden;
  magic[0] = 'X';
  EXPECT_THROW(reads(magic), FormatError);
  std::string version = golden;
  version[4] = 2;
  EXPECT_THROW(reads(version), FormatError);
  EXPECT_THROW(reads(golden.substr(0, golden.size() - 3)), FormatError);
  EXPECT_THROW(reads(golden + "x"), FormatError);
}

TEST(Checkpoint, ModelRoundTripIsExact) {
  const auto run = tiny_run();
  MrcModel m(run.model, tiny_vocab(), 3, 17);
  for (Parameter* p : m.parameters()) p->value[0] += 0.25;  // differ from a fresh init
  const auto file = make_checkpoint(m, run, 3, {{"best_epoch", 4}});
  std::istringstream in(bytes_of(file));
  const auto loaded = restore_model(read_checkpoint_file(in));
  EXPECT_EQ(loaded.knowledge_dim, 3u);
  EXPECT_EQ(loaded.header["meta"]["best_epoch"], 4);
  EXPECT_EQ(to_json(loaded.config), to_json(run));
  EXPECT_EQ(loaded.model->vocab().words(), m.vocab().words());
  auto a = m.parameters();
  auto b = loaded.model->parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }
  EXPECT_EQ(bytes_of(make_checkpoint(*loaded.model, loaded.config, 3, {{"best_epoch", 4}})), bytes_of(file));
}

TEST(Checkpoint, ShapeAndNameMismatchesAreReported) {
  const auto run = tiny_run();
  MrcModel m(run.model, tiny_vocab(), 3, 17);
  auto file = make_checkpoint(m, run, 3);
  auto shape = file;
  shape.tensors[0].value = Tensor::matrix(1, 1);
  EXPECT_THROW(restore_model(shape), FormatError);
  auto missing = file;
  missing.tensors.pop_back();
  EXPECT_THROW(restore_model(missing), FormatError);
  auto extra = file;
  extra.tensors.push_back({"stray", Tensor::matrix(1, 1)});
  EXPECT_THROW(restore_model(extra), FormatError);
  auto bad_config = file;
  bad_config.header["config"]["train"]["epochz"] = 1;
  EXPECT_THROW(restore_model(bad_config), FormatError);
}
