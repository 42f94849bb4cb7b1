pub mod game_tree;
