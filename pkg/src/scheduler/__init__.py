# Learning-rate scheduling 
