# Training loss history 
