#pragma once

#include "vfs3d/harness/config.hpp"

namespace fixtures {

/// A model small enough to train for a few steps inside a unit test.
inline vfs3d::harness::Config tiny_config() {
  vfs3d::harness::Config c;
  c.scene.train_scenes = 2;
  c.scene.val_scenes = 1;
  c.scene.num_points = 64;
  c.scene.camera_width = 32;
  c.scene.camera_height = 24;
  c.scene.focal = 24;
  c.image_encoder = {3, {4, 6, 8, 10, 12}, 1};
  c.image_neck = {{4, 4, 4, 4}};
  c.lidar.enc_channels = {4, 8};
  c.lidar.dec_channels = {4};
  c.lidar.heads = 2;
  c.lidar.group_size = 8;
  c.fusion.fused_width = 8;
  c.fusion.heads = 2;
  c.fusion.ffn_hidden = 8;
  c.train.lidar = {2, 1};
  c.train.image = {1, 2};
  c.train.fusion = {2, 1};
  c.optim.main_lr = 1e-3;
  c.optim.block_lr = 1e-3;
  c.finalize();
  return c;
}

}  // namespace fixtures
