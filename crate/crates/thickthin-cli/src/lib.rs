//! Configuration, density files, commands and plot exports of the
//! `thickthin` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod density;
pub mod export;
