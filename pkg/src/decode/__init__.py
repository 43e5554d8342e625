# Decoding - beam search and lattices
