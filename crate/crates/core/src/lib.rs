//! Compiler from 1D convolutional networks to fixed-point C99.
//!
//! The pipeline is: load a [`ir::Graph`], simplify it with [`transforms`],
//! quantize it with [`quantizer`], plan buffers with [`allocator`] and emit C
//! with [`codegen`]. [`interpreter`] executes every stage in software and is
//! the reference the generated code is checked against; [`costmodel`]
//! reports operation counts and memory footprint.

pub mod allocator;
pub mod codegen;
pub mod costmodel;
pub mod fxp;
pub mod interpreter;
pub mod ir;
pub mod quantizer;
pub mod transforms;
