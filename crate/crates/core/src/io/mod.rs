//! On-disk formats: tensor containers, PNM images and tag files.

pub mod pnm;
pub mod tags;
pub mod tensor_file;

pub use pnm::{
    read_color, read_label_map, read_mask, read_regions, write_color, write_label_map,
    write_mask, write_regions,
};
pub use tags::{read_tags, write_tags};
pub use tensor_file::{
    read_grid2, read_grid3, read_tensor, write_grid2, write_grid3, write_tensor, DType, Tensor,
};
